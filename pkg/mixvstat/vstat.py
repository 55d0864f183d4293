"""V- and U-statistics, Hoeffding projections and the auxiliary constants of the tail bounds"""
from dataclasses import dataclass
from itertools import combinations
import logging
import math
import numpy as np
from scipy.stats import qmc
from typing import Callable, List, Optional, Tuple

from mixvstat.kernels import ApproxDomain, KernelSpec
from mixvstat.replication import ordered_map

logger = logging.getLogger(__name__)

MAX_ORDER = 3
# Width of the Monte Carlo noise band, in standard errors
SE_BAND = 3.0

# Draws n i.i.d. points of the stationary marginal: (rng, n) -> (n, d)
IIDSampler = Callable[[np.random.Generator, int], np.ndarray]


def _check_sample(spec: KernelSpec, sample: np.ndarray) -> np.ndarray:
    sample = np.asarray(sample, dtype=float)
    if sample.ndim == 1:
        sample = sample[:, None]
    if sample.shape[0] < 1:
        raise ValueError("The sample must hold at least one point")
    if sample.shape[1] != spec.dim:
        raise ValueError(f"Kernel {spec.name} expects points of dimension {spec.dim}, found {sample.shape[1]}")
    if spec.order > MAX_ORDER:
        raise ValueError(f"Statistics are limited to order {MAX_ORDER}, found order {spec.order}")
    return sample


def _row_sum(spec: KernelSpec, sample: np.ndarray, i: int, distinct: bool) -> float:
    """Sum of f over all tuples whose first index is i"""
    n = sample.shape[0]
    if spec.order == 1:
        return float(spec.func(sample[i:i + 1])[0])
    if spec.order == 2:
        values = spec.func(np.repeat(sample[i:i + 1], n, axis=0), sample)
        if distinct:
            values[i] = 0.0
        return math.fsum(values)
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    j, k = j.ravel(), k.ravel()
    values = spec.func(np.repeat(sample[i:i + 1], n * n, axis=0), sample[j], sample[k])
    if distinct:
        values[(j == i) | (k == i) | (j == k)] = 0.0
    return math.fsum(values)


def _tuple_sum(spec: KernelSpec, sample: np.ndarray, distinct: bool, threads: int) -> float:
    rows = ordered_map(lambda i: _row_sum(spec, sample, i, distinct), range(sample.shape[0]), threads=threads)
    return math.fsum(rows)


def v_statistic(spec: KernelSpec, sample: np.ndarray, threads: int = 1) -> float:
    """n^{-m} sum of f over all m-tuples of sample points, repetitions included"""
    sample = _check_sample(spec, sample)
    n = sample.shape[0]
    return _tuple_sum(spec, sample, False, threads) / n ** spec.order


def u_statistic(spec: KernelSpec, sample: np.ndarray, threads: int = 1) -> float:
    """Average of f over all ordered m-tuples of distinct sample points"""
    sample = _check_sample(spec, sample)
    n = sample.shape[0]
    if n < spec.order:
        raise ValueError(f"A U-statistic of order {spec.order} needs at least {spec.order} points, found {n}")
    return _tuple_sum(spec, sample, True, threads) / math.perm(n, spec.order)


### Rank statistics

def _tie_pairs(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True, axis=0)
    return int(np.sum(counts * (counts - 1) // 2))


def _count_inversions(ranks: np.ndarray) -> int:
    """Number of pairs i < j with ranks[i] > ranks[j], by stable binary partitioning from the top bit down

    Before the pass on bit b the elements sit in contiguous groups sharing the bits above b,
    each group in its original order. A pair first separated by bit b is an inversion exactly
    when its 1 precedes its 0, and a stable partition of every group on bit b sets up the next
    pass. Each pass is linear, so the count takes O(n log n).
    """
    a = np.asarray(ranks, dtype=np.int64).ravel()
    n = a.shape[0]
    if n < 2:
        return 0
    a = a - a.min()
    positions = np.arange(n)
    starts = np.zeros(1, dtype=np.int64)
    inversions = 0
    for b in range(int(a.max()).bit_length() - 1, -1, -1):
        ends = np.append(starts[1:], n)
        group_start = np.repeat(starts, ends - starts)
        bit = (a >> b) & 1
        ones_before = np.cumsum(bit) - bit
        ones_before = ones_before - ones_before[group_start]
        inversions += int(np.sum(ones_before[bit == 0]))
        zeros = np.add.reduceat(1 - bit, starts)
        zeros_per_element = np.repeat(zeros, ends - starts)
        offset = positions - group_start
        target = np.where(bit == 0, group_start + offset - ones_before, group_start + zeros_per_element + ones_before)
        partitioned = np.empty_like(a)
        partitioned[target] = a
        a = partitioned
        split = starts + zeros
        keep = (split > starts) & (split < ends)
        starts = np.column_stack([starts, np.where(keep, split, -1)]).ravel()
        starts = starts[starts >= 0]
    return inversions


def kendall_tau_fast(sample: np.ndarray) -> float:
    """U-statistic of the Kendall kernel sign(x1 - y1) sign(x2 - y2) in O(n log n)

    Tied pairs contribute 0, so the value equals the brute-force average over distinct pairs.
    """
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 2 or sample.shape[1] != 2:
        raise ValueError(f"Kendall's tau needs a bivariate sample of shape (n, 2), found {sample.shape}")
    n = sample.shape[0]
    if n < 2:
        raise ValueError(f"Kendall's tau needs at least 2 points, found {n}")
    order = np.lexsort((sample[:, 1], sample[:, 0]))
    x, y = sample[order, 0], sample[order, 1]
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(x)
    n2 = _tie_pairs(y)
    n3 = _tie_pairs(np.column_stack([x, y]))
    _, y_ranks = np.unique(y, return_inverse=True)
    discordant = _count_inversions(y_ranks.ravel())
    return (n0 - n1 - n2 + n3 - 2 * discordant) / n0


def _sign_sums(values: np.ndarray) -> np.ndarray:
    """sum_j sign(values[i] - values[j]) for every i"""
    ordered = np.sort(values)
    less = np.searchsorted(ordered, values, side="left")
    greater = values.shape[0] - np.searchsorted(ordered, values, side="right")
    return (less - greater).astype(np.int64)


def spearman_rho(sample: np.ndarray) -> float:
    """n^{-3} sum_{i,j,k} sign(x_i1 - x_j1) sign(x_i2 - x_k2), via per-coordinate rank counts"""
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 2 or sample.shape[1] != 2:
        raise ValueError(f"Spearman's rho needs a bivariate sample of shape (n, 2), found {sample.shape}")
    n = sample.shape[0]
    if n < 1:
        raise ValueError("Spearman's rho needs at least one point")
    total = int(np.dot(_sign_sums(sample[:, 0]), _sign_sums(sample[:, 1])))
    return total / n ** 3


### Hoeffding decomposition

@dataclass(frozen=True)
class ProjectionEstimate:
    """Monte Carlo estimates of g_p and f_p at a batch of points"""
    p: int
    g: np.ndarray
    g_se: np.ndarray
    f: np.ndarray
    f_se: np.ndarray


class HoeffdingProjector:
    """Evaluates the conditional expectations g_p and the degenerate components f_p of a kernel

    g_p(x_1..x_p) = E f(x_1..x_p, X~_{p+1}..X~_m) and, by inclusion-exclusion,
    f_p(x_1..x_p) = sum_{S subset [p]} (-1)^{p-|S|} g_{|S|}(x_S) with g_0 = theta.
    Each subset uses its own independent draws so standard errors add in quadrature.
    """

    def __init__(self, spec: KernelSpec, iid_sampler: IIDSampler, mc_budget: int, theta: float, se_theta: float):
        if mc_budget < 100:
            raise ValueError(f"Monte Carlo budget must be at least 100, found {mc_budget}")
        self.spec = spec
        self.iid_sampler = iid_sampler
        self.mc_budget = mc_budget
        self.theta = theta
        self.se_theta = se_theta

    def conditional(self, points: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """g_q at points of shape (N, q, d) with the standard errors of the estimates"""
        points = np.asarray(points, dtype=float)
        n_points, q, d = points.shape
        m = self.spec.order
        if q == m:
            values = self.spec.func(*[points[:, k, :] for k in range(m)])
            return values, np.zeros(n_points)
        budget = self.mc_budget
        free = [self.iid_sampler(rng, budget) for _ in range(m - q)]
        means = np.empty(n_points)
        ses = np.empty(n_points)
        for k in range(n_points):
            fixed = [np.repeat(points[k, a][None, :], budget, axis=0) for a in range(q)]
            values = self.spec.func(*fixed, *free)
            means[k] = values.mean()
            ses[k] = values.std(ddof=1) / math.sqrt(budget)
        return means, ses

    def project(self, points: np.ndarray, p: int, rng: np.random.Generator) -> ProjectionEstimate:
        points = np.asarray(points, dtype=float)
        if points.ndim != 3 or points.shape[1] != p or points.shape[2] != self.spec.dim:
            raise ValueError(f"Expected points of shape (N, {p}, {self.spec.dim}), found {points.shape}")
        if not 1 <= p <= self.spec.order:
            raise ValueError(f"Projection order must lie in [1, {self.spec.order}], found {p}")
        f = np.full(points.shape[0], (-1) ** p * self.theta)
        variance = np.full(points.shape[0], self.se_theta ** 2)
        g = g_se = None
        for size in range(1, p + 1):
            for subset in combinations(range(p), size):
                values, ses = self.conditional(points[:, list(subset), :], rng)
                f = f + (-1) ** (p - size) * values
                variance = variance + ses ** 2
                if size == p:
                    g, g_se = values, ses
        return ProjectionEstimate(p=p, g=g, g_se=g_se, f=f, f_se=np.sqrt(variance))


@dataclass(frozen=True)
class HoeffdingComponents:
    """Mean, projector and degeneracy level of a kernel under an i.i.d. law"""
    theta: float
    proj: HoeffdingProjector
    degeneracy_r_minus_1: int
    mc_budget: int
    se_theta: float
    inconclusive: bool = False


@dataclass(frozen=True)
class DegeneracyLevel:
    """Degeneracy level r - 1; inconclusive when an estimate sits inside the noise band"""
    level: int
    inconclusive: bool
    max_deviation: float
    max_se: float


def estimate_theta(spec: KernelSpec, iid_sampler: IIDSampler, mc_budget: int, rng: np.random.Generator) -> Tuple[float, float]:
    """theta = E f(X~_1..X~_m) under the product law, with its standard error"""
    draws = [iid_sampler(rng, mc_budget) for _ in range(spec.order)]
    values = spec.func(*draws)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(mc_budget))


def _projector(spec, iid_sampler, mc_budget, rng) -> HoeffdingProjector:
    theta, se_theta = estimate_theta(spec, iid_sampler, mc_budget, rng)
    return HoeffdingProjector(spec, iid_sampler, mc_budget, theta, se_theta)


def hoeffding_project(spec: KernelSpec, iid_sampler: IIDSampler, points: np.ndarray, p: int, mc_budget: int,
                      rng: np.random.Generator) -> ProjectionEstimate:
    """Monte Carlo estimates of g_p and f_p at the given points"""
    return _projector(spec, iid_sampler, mc_budget, rng).project(points, p, rng)


def degeneracy_level(spec: KernelSpec, iid_sampler: IIDSampler, tol: float, mc_budget: int, rng: np.random.Generator,
                     n_points: int = 20) -> DegeneracyLevel:
    """Smallest p with g_p - theta nonzero, minus one; m - 1 when every projection vanishes

    At each p the deviations |g_p - theta| are compared to tol: nonzero when some
    deviation exceeds tol by more than 3 standard errors, vanishing when all deviations stay
    below tol with standard errors below tol / 3, inconclusive otherwise.
    """
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, found {tol}")
    projector = _projector(spec, iid_sampler, mc_budget, rng)
    deviation = se = 0.0
    for p in range(1, spec.order):
        points = np.stack([iid_sampler(rng, n_points) for _ in range(p)], axis=1)
        g, g_se = projector.conditional(points, rng)
        deviations = np.abs(g - projector.theta)
        ses = np.sqrt(g_se ** 2 + projector.se_theta ** 2)
        deviation, se = float(deviations.max()), float(ses.max())
        if np.max(deviations - SE_BAND * ses) > tol:
            return DegeneracyLevel(level=p - 1, inconclusive=False, max_deviation=deviation, max_se=se)
        if deviation > tol or se > tol / SE_BAND:
            logger.warning(f"Degeneracy of {spec.name} at p={p} is inconclusive: deviation {deviation:.3g}, standard error {se:.3g}, tolerance {tol}")
            return DegeneracyLevel(level=p - 1, inconclusive=True, max_deviation=deviation, max_se=se)
    return DegeneracyLevel(level=spec.order - 1, inconclusive=False, max_deviation=deviation, max_se=se)


def hoeffding_components(spec: KernelSpec, iid_sampler: IIDSampler, mc_budget: int, rng: np.random.Generator,
                         tol: float = 0.05) -> HoeffdingComponents:
    projector = _projector(spec, iid_sampler, mc_budget, rng)
    level = degeneracy_level(spec, iid_sampler, tol, mc_budget, rng)
    return HoeffdingComponents(
        theta=projector.theta,
        proj=projector,
        degeneracy_r_minus_1=level.level,
        mc_budget=mc_budget,
        se_theta=projector.se_theta,
        inconclusive=level.inconclusive,
    )


### Auxiliary constants

@dataclass(frozen=True)
class NuSquared:
    value: float
    se: float
    clamped: bool = False


def nu_squared(f1_evaluator: Callable[[np.ndarray], np.ndarray], process_sampler: Callable[[np.random.Generator, int], np.ndarray],
               lag_cap: int, mc_budget: int, rng: np.random.Generator, n_paths: int = 20) -> NuSquared:
    """Long-run variance Var f_1(X_1) + 2 sum_{k=1}^{lag_cap} Cov(f_1(X_1), f_1(X_{1+k})) from simulated paths

    Each path of length mc_budget gives one estimate; the value is their mean and the standard
    error their spread over sqrt(n_paths).
    """
    if lag_cap < 1:
        raise ValueError(f"Lag cap must be at least 1, found {lag_cap}")
    if mc_budget <= lag_cap:
        raise ValueError(f"Path length {mc_budget} must exceed the lag cap {lag_cap}")
    estimates = []
    for _ in range(n_paths):
        values = np.asarray(f1_evaluator(process_sampler(rng, mc_budget)), dtype=float)
        values = values - values.mean()
        n = values.shape[0]
        autocov = [np.dot(values[:n - k], values[k:]) / n for k in range(lag_cap + 1)]
        estimates.append(autocov[0] + 2 * math.fsum(autocov[1:]))
    estimates = np.array(estimates)
    value = float(estimates.mean())
    se = float(estimates.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.inf
    if value < 0:
        logger.warning(f"Negative long-run variance estimate {value:.3g} clamped to 0")
        return NuSquared(value=0.0, se=se, clamped=True)
    return NuSquared(value=value, se=se)


@dataclass(frozen=True)
class BiasConstants:
    """Constants s_i, v_i and the projected approximation bias t'

    The suprema over C_p are maxima over finitely many anchors, hence lower estimates of the
    true suprema; t' is a best-effort value.
    """
    s: List[float]
    v: List[float]
    t_prime: float
    C_const: float = 1.0
    n_anchors: int = 0
    best_effort: bool = True

    def __post_init__(self):
        if any(x < 0 for x in self.s) or any(not 0 <= x <= 1 for x in self.v):
            raise ValueError(f"Need s_i >= 0 and 0 <= v_i <= 1, found s={self.s}, v={self.v}")


def _anchors(domain: ApproxDomain, p: int, n_anchors: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified in-domain anchors of C_p, shape (<= n_anchors, p, d)"""
    projected = domain.reshaped(p, domain.dim)
    sampler = qmc.LatinHypercube(d=p * domain.dim, seed=rng)
    for factor in (4, 16, 64):
        unit = sampler.random(factor * n_anchors)
        points = (2 * unit - 1).reshape(-1, p, domain.dim) * domain.halfwidth
        points = points[projected.contains(points)]
        if len(points) >= n_anchors or factor == 64:
            return points[:n_anchors]


def bias_constants(spec: KernelSpec, expanded, iid_sampler: IIDSampler, domain: ApproxDomain, mc_budget: int,
                   rng: np.random.Generator, t: Optional[float] = None, C_const: float = 1.0, n_anchors: int = 50) -> BiasConstants:
    """s_i = sup_{C_i} (E f^2)^{1/2} and v_i = sup_{C_i} P(completion outside C)^{1/2} for i < m, then
    t' = C (t + sum s_i v_i + F B^m sum v_i)"""
    m, d = spec.order, spec.dim
    t = expanded.target_t if t is None else t
    cap = spec.sup_bound if spec.sup_bound is not None else math.inf
    draws = np.stack([iid_sampler(rng, mc_budget) for _ in range(m)], axis=1)
    s = [min(math.sqrt(float(np.mean(spec.func(*[draws[:, k] for k in range(m)]) ** 2))), cap)]
    v = [math.sqrt(1.0 - float(np.mean(domain.contains(draws))))]
    used = 0
    for p in range(1, m):
        anchors = _anchors(domain, p, n_anchors, rng)
        used = max(used, len(anchors))
        s_p = v_p = 0.0
        for anchor in anchors:
            free = np.stack([iid_sampler(rng, mc_budget) for _ in range(m - p)], axis=1)
            fixed = np.repeat(anchor[None], mc_budget, axis=0)
            tuples = np.concatenate([fixed, free], axis=1)
            s_p = max(s_p, math.sqrt(float(np.mean(spec.func(*[tuples[:, k] for k in range(m)]) ** 2))))
            v_p = max(v_p, math.sqrt(1.0 - float(np.mean(domain.contains(tuples)))))
        s.append(min(s_p, cap))
        v.append(v_p)
    t_prime = C_const * (t + sum(a * b for a, b in zip(s, v)) + expanded.F * expanded.B ** m * sum(v))
    return BiasConstants(s=s, v=v, t_prime=t_prime, C_const=C_const, n_anchors=used)


def residual_probability(n: int, tail_probs, J_total: float = 0.0, M2: float = 0.0, D: float = 0.0) -> float:
    """Union-bound surrogate n sum_l P(|X_l| >= M) + n^2 J M2 D of the residual probability

    Values above 1 are returned as they are.
    """
    tail_probs = list(np.atleast_1d(tail_probs))
    if n < 1 or min(tail_probs + [J_total, M2, D]) < 0:
        raise ValueError(f"Inputs must be non-negative with n >= 1, found n={n}, tails={tail_probs}, J={J_total}, M2={M2}, D={D}")
    value = n * math.fsum(tail_probs) + n ** 2 * J_total * M2 * D
    if value >= 1:
        logger.warning(f"Residual probability {value:.4g} is at least 1, the bound is vacuous")
    return value
