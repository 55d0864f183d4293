"""Splittable seeding and ordered worker pools for Monte Carlo replications.

Every stochastic stream in the package is addressed by a master seed plus a tuple of
integer stream ids (pair index, replication index, ...). The stream seed is obtained by
folding the ids through the SplitMix64 finaliser:

    state = master
    for id in ids:
        state = splitmix64(state ^ splitmix64(id + 0x9E3779B97F4A7C15))

    splitmix64(z):
        z = (z + 0x9E3779B97F4A7C15) mod 2^64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
        return z ^ (z >> 31)

The resulting 64-bit integer seeds a numpy PCG64 generator. Any implementation following
these constants reproduces the streams.
"""
from concurrent.futures import ThreadPoolExecutor
import logging
import numpy as np
from tqdm.auto import tqdm
from typing import Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

T = TypeVar("T")
R = TypeVar("R")


def splitmix64(z: int) -> int:
    """One SplitMix64 step on a 64-bit integer"""
    z = (z + _GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *stream_ids: int) -> int:
    """Derives the seed of the stream addressed by (master, *stream_ids)"""
    if master is None:
        raise ValueError("A master seed is required to derive stream seeds")
    state = int(master) & _MASK64
    for stream_id in stream_ids:
        if int(stream_id) < 0:
            raise ValueError(f"Stream ids must be non-negative, found {stream_id}")
        state = splitmix64(state ^ splitmix64((int(stream_id) + _GOLDEN_GAMMA) & _MASK64))
    return state


def make_rng(master: int, *stream_ids: int) -> np.random.Generator:
    """Creates a numpy Generator for the stream addressed by (master, *stream_ids)"""
    return np.random.default_rng(derive_seed(master, *stream_ids))


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1, desc: Optional[str] = None,
                progress: bool = False) -> List[R]:
    """Applies fn to every item, possibly in a thread pool, returning results in input order

    Results never depend on the number of threads: each item must carry everything
    (seeds included) its computation needs.
    """
    items = list(items)
    if threads < 1:
        raise ValueError(f"Number of threads must be at least 1, found {threads}")
    if threads == 1:
        return [fn(item) for item in tqdm(items, desc=desc, disable=not progress)]
    logger.debug(f"Running {len(items)} tasks on {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(tqdm(pool.map(fn, items), total=len(items), desc=desc, disable=not progress))
