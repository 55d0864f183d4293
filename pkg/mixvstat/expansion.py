"""Finite separable approximations of kernels with certified constants (F, B, mu_a)

An expansion represents

    f~(x_1, ..., x_m) = sum_t w_t e_{j_t1}(x_1) ... e_{j_tm}(x_m)

with bases e_j(x) = cos(2 pi u_j.x), sin(2 pi u_j.x) or the coordinate projection u_j.x.
Combinators keep their parts and evaluate lazily; materialize() flattens them.
"""
from dataclasses import dataclass, replace
from enum import Enum
from itertools import permutations, product
import json
import logging
import math
import numpy as np
from numpy import pi
from scipy import sparse
from typing import List, Optional, Sequence, Tuple, Union

from mixvstat.errors import DomainError, UnsupportedKernelError
from mixvstat.kernels import ApproxDomain, KernelSpec, KernelTags, SpectralParts, kernel_domain, product_kernel, sign_kernel

logger = logging.getLogger(__name__)

# Maximum number of (points x terms) products held in memory during evaluation
EVAL_BLOCK = 4_000_000
# Per-axis grid resolution caps for sup-error certification, by total dimension md
GRID_CAPS = {1: 200, 2: 200, 3: 40, 4: 16}


class BasisModes(Enum):
    """Kinds of base functions of an expansion"""
    COS = "cos"
    SIN = "sin"
    COORD = "coord"  # x -> u.x, used by exact polynomial expansions


class CombineModes(Enum):
    """How a composite expansion combines its parts"""
    SUM = "sum"
    PRODUCT = "product"


class ExpansionRegimes(Enum):
    """Regimes with a closed-form coefficient-sum constant F"""
    B1 = "B1"  # integrable transform with finite first moment
    B2 = "B2"  # Lipschitz kernel, polynomially decaying transform
    B3 = "B3"  # Lipschitz kernel, logarithmic regime
    B4 = "B4"  # product of piecewise smooth factors with jumps


def _double_factorial(n: int) -> int:
    """n!! with the convention (-1)!! = 0!! = 1"""
    return math.prod(range(n, 0, -2))


def gamma_constants(n: int) -> Tuple[float, float]:
    """Returns a tuple with:
        - Gamma_1(n), surface area of the unit sphere of R^n
        - Gamma_2(n), mean norm of a standard normal vector of R^n
    """
    if n < 1:
        raise ValueError(f"Dimension must be positive, found {n}")
    ratio = _double_factorial(n - 1) / _double_factorial(n - 2)
    if n % 2 == 0:
        return (2 * pi) ** (n / 2) / _double_factorial(n - 2), ratio * math.sqrt(2 * pi) / 2
    return 2 * (2 * pi) ** ((n - 1) / 2) / _double_factorial(n - 2), ratio * 2 / math.sqrt(2 * pi)


def _angle_sum_terms(m: int, kind: str) -> List[Tuple[float, Tuple[str, ...]]]:
    """Expands cos or sin of a sum of m angles into signed products of per-angle cos/sin"""
    cos, sin = BasisModes.COS.value, BasisModes.SIN.value
    if m == 1:
        return [(1.0, (kind,))]
    terms = []
    # cos(a + r) = cos a cos r - sin a sin r, sin(a + r) = sin a cos r + cos a sin r
    for coef, rest in _angle_sum_terms(m - 1, cos):
        terms.append((coef, (cos if kind == cos else sin,) + rest))
    for coef, rest in _angle_sum_terms(m - 1, sin):
        terms.append((-coef if kind == cos else coef, (sin if kind == cos else cos,) + rest))
    return terms


def _trig_product(factors):
    """Product of single-angle trig functions as a signed sum of single-angle trig functions

    factors is a list of (frequency, kind). Returns a list of (frequency, kind, coefficient);
    the coefficients' absolute values sum to 1.
    """
    cos, sin = BasisModes.COS.value, BasisModes.SIN.value
    freq0, kind0 = factors[0]
    terms = [(np.asarray(freq0, dtype=float), kind0, 1.0)]
    for freq, kind in factors[1:]:
        if BasisModes.COORD.value in (kind, kind0):
            raise UnsupportedKernelError("Products of coordinate bases on the same argument cannot be materialized")
        freq = np.asarray(freq, dtype=float)
        expanded = []
        for a, kind_a, coef in terms:
            if kind_a == cos and kind == cos:
                expanded += [(a - freq, cos, coef / 2), (a + freq, cos, coef / 2)]
            elif kind_a == sin and kind == sin:
                expanded += [(a - freq, cos, coef / 2), (a + freq, cos, -coef / 2)]
            elif kind_a == sin and kind == cos:
                expanded += [(a + freq, sin, coef / 2), (a - freq, sin, coef / 2)]
            else:
                expanded += [(a + freq, sin, coef / 2), (a - freq, sin, -coef / 2)]
        terms = expanded
    return terms


@dataclass(frozen=True, eq=False)
class ExpandedKernel:
    """Separable approximation of an order-m kernel with its certified constants"""
    order: int
    dim: int
    frequencies: np.ndarray  # (K, d)
    basis: Tuple[str, ...]  # K basis tags
    index: np.ndarray  # (T, m) feature indices of every term
    weights: np.ndarray  # (T,)
    F: float
    B: float
    mu: float  # mu_a does not depend on a for bounded bases
    target_t: float
    domain: ApproxDomain
    lip_L: Optional[float] = None
    seed: Optional[int] = None
    symmetrized: bool = False  # evaluation averages over argument permutations
    combinator: Optional[str] = None
    parts: Tuple["ExpandedKernel", ...] = ()
    part_args: Tuple[Tuple[int, ...], ...] = ()
    lambdas: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.combinator is None:
            object.__setattr__(self, "frequencies", np.asarray(self.frequencies, dtype=float).reshape(-1, self.dim))
            object.__setattr__(self, "index", np.asarray(self.index, dtype=np.int64).reshape(-1, self.order))
            object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).ravel())
            object.__setattr__(self, "basis", tuple(self.basis))
            if len(self.basis) != self.frequencies.shape[0]:
                raise ValueError(f"An ExpandedKernel needs one basis tag per frequency, found {len(self.basis)} tags for {self.frequencies.shape[0]} frequencies")
            for tag in set(self.basis):
                if tag not in [e.value for e in BasisModes]:
                    raise ValueError(f"An ExpandedKernel was defined with basis {tag}, which is not an accepted basis ({[e.value for e in BasisModes]})")
            if self.index.shape[0] != self.weights.shape[0]:
                raise ValueError(f"An ExpandedKernel needs one weight per term, found {self.weights.shape[0]} weights for {self.index.shape[0]} terms")
        elif self.combinator not in [e.value for e in CombineModes]:
            raise ValueError(f"An ExpandedKernel was defined with combinator {self.combinator}, which is not an accepted combinator ({[e.value for e in CombineModes]})")
        if self.F < 0 or self.B < 0 or self.target_t < 0:
            raise ValueError(f"Expansion constants must be non-negative, found F={self.F}, B={self.B}, t={self.target_t}")

    @property
    def is_leaf(self) -> bool:
        return self.combinator is None

    @property
    def n_features(self) -> int:
        if self.is_leaf:
            return self.frequencies.shape[0]
        return sum(p.n_features for p in self.parts)

    @property
    def n_terms(self) -> int:
        if self.is_leaf:
            return self.index.shape[0]
        if self.combinator == CombineModes.SUM.value:
            return sum(p.n_terms for p in self.parts)
        return math.prod(p.n_terms for p in self.parts)

    def mu_a(self, a: float) -> float:
        return self.mu

    def coefficient_sum(self) -> float:
        """Sum of absolute coefficients of the (materialized) expansion"""
        if self.is_leaf:
            return float(np.sum(np.abs(self.weights)))
        if self.combinator == CombineModes.SUM.value:
            return sum(abs(lam) * p.coefficient_sum() for lam, p in zip(self.lambdas, self.parts))
        return math.prod(p.coefficient_sum() for p in self.parts)

    def basis_values(self, x: np.ndarray) -> np.ndarray:
        """Values of every base function at points of shape (N, d), shape (N, K)"""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        projection = x @ self.frequencies.T
        basis = np.asarray(self.basis)
        out = np.empty_like(projection)
        is_cos = basis == BasisModes.COS.value
        is_sin = basis == BasisModes.SIN.value
        is_coord = basis == BasisModes.COORD.value
        out[:, is_cos] = np.cos(2 * pi * projection[:, is_cos])
        out[:, is_sin] = np.sin(2 * pi * projection[:, is_sin])
        out[:, is_coord] = projection[:, is_coord]
        return out

    def _raw_evaluate(self, args: List[np.ndarray]) -> np.ndarray:
        if self.combinator == CombineModes.SUM.value:
            return sum(lam * p.evaluate(*[args[k] for k in pargs]) for lam, p, pargs in zip(self.lambdas, self.parts, self.part_args))
        if self.combinator == CombineModes.PRODUCT.value:
            out = np.ones(args[0].shape[0])
            for p, pargs in zip(self.parts, self.part_args):
                out = out * p.evaluate(*[args[k] for k in pargs])
            return out
        n = args[0].shape[0]
        rows = max(1, EVAL_BLOCK // max(self.n_features, 1))
        if n > rows:
            return np.concatenate([self._raw_evaluate([a[start:start + rows] for a in args]) for start in range(0, n, rows)])
        values = [self.basis_values(a) for a in args]
        out = np.zeros(n)
        chunk = max(1, EVAL_BLOCK // max(n, 1))
        for start in range(0, self.index.shape[0], chunk):
            idx = self.index[start:start + chunk]
            block = values[0][:, idx[:, 0]]
            for k in range(1, self.order):
                block = block * values[k][:, idx[:, k]]
            out += block @ self.weights[start:start + chunk]
        return out

    def evaluate(self, *args) -> np.ndarray:
        """Evaluates f~ at m arrays of points of shape (N, d)"""
        if len(args) != self.order:
            raise ValueError(f"Expansion has order {self.order} but received {len(args)} arguments")
        args = [np.atleast_2d(np.asarray(a, dtype=float)) for a in args]
        for a in args:
            if a.shape[1] != self.dim:
                raise ValueError(f"Expansion expects points of dimension {self.dim}, found {a.shape[1]}")
        if not self.symmetrized:
            return self._raw_evaluate(args)
        perms = list(permutations(range(self.order)))
        return sum(self._raw_evaluate([args[k] for k in perm]) for perm in perms) / len(perms)

    def __call__(self, *points) -> float:
        return float(self.evaluate(*[np.asarray(p, dtype=float).reshape(1, self.dim) for p in points])[0])

    def evaluate_grid(self, axis_points: np.ndarray) -> np.ndarray:
        """Evaluates f~ on the tensor grid axis_points^m, flattened in C order (first argument slowest)"""
        axis_points = np.atleast_2d(np.asarray(axis_points, dtype=float))
        g = axis_points.shape[0]
        if self.is_leaf and self.order == 2:
            # f~ on the grid is E W E^T with W the sparse coefficient matrix
            values = self.basis_values(axis_points)
            k = self.n_features
            coefficients = sparse.coo_matrix((self.weights, (self.index[:, 0], self.index[:, 1])), shape=(k, k)).tocsr()
            grid = values @ np.asarray(coefficients @ values.T)
            if self.symmetrized:
                grid = 0.5 * (grid + grid.T)
            return grid.ravel()
        if self.is_leaf:
            tuples = _grid_tuples(axis_points, self.order)
            return self.evaluate(*[tuples[:, k, :] for k in range(self.order)])
        # Part grids are broadcast onto the argument positions they act on
        tensor = np.zeros((g,) * self.order) if self.combinator == CombineModes.SUM.value else np.ones((g,) * self.order)
        lambdas = self.lambdas if self.combinator == CombineModes.SUM.value else (1.0,) * len(self.parts)
        for lam, p, pargs in zip(lambdas, self.parts, self.part_args):
            part = np.transpose(p.evaluate_grid(axis_points).reshape((g,) * p.order), np.argsort(pargs))
            part = part.reshape([g if k in pargs else 1 for k in range(self.order)])
            tensor = tensor + lam * part if self.combinator == CombineModes.SUM.value else tensor * part
        if self.symmetrized:
            perms = list(permutations(range(self.order)))
            tensor = sum(np.transpose(tensor, perm) for perm in perms) / len(perms)
        return tensor.ravel()

    def embed(self, dim: int, coords: Sequence[int]) -> "ExpandedKernel":
        """Same expansion acting on the coordinates coords of points of R^dim"""
        coords = list(coords)
        if len(coords) != self.dim:
            raise ValueError(f"Need {self.dim} target coordinates, found {coords}")
        if self.is_leaf:
            frequencies = np.zeros((self.n_features, dim))
            frequencies[:, coords] = self.frequencies
            return replace(self, dim=dim, frequencies=frequencies, domain=self.domain.reshaped(self.order, dim, coords))
        return replace(self, dim=dim, parts=tuple(p.embed(dim, coords) for p in self.parts),
                       domain=self.domain.reshaped(self.order, dim, coords))

    def _explicit_terms(self):
        """Returns a tuple with:
            - Frequencies of the features
            - Basis tags of the features
            - Term index matrix with argument symmetrization written out
            - Term weights with argument symmetrization written out
        """
        leaf = self.materialize()
        if not leaf.symmetrized:
            return leaf.frequencies, list(leaf.basis), leaf.index, leaf.weights
        perms = list(permutations(range(leaf.order)))
        index = np.concatenate([leaf.index[:, list(perm)] for perm in perms])
        weights = np.concatenate([leaf.weights / len(perms)] * len(perms))
        return leaf.frequencies, list(leaf.basis), index, weights

    def materialize(self, max_terms: int = 200_000) -> "ExpandedKernel":
        """Flattens a composite expansion into a single separable expansion with the same constants"""
        if self.is_leaf:
            return self
        if self.n_terms > max_terms:
            raise ValueError(f"Materializing would create {self.n_terms} terms, above the limit of {max_terms}")
        explicit = [p._explicit_terms() for p in self.parts]
        frequencies, basis, index, weights = [], [], [], []
        if self.combinator == CombineModes.SUM.value:
            # A shared constant feature fills the arguments a part does not use
            frequencies.append(np.zeros((1, self.dim)))
            basis.append(BasisModes.COS.value)
            offset = 1
            for lam, pargs, (freq, tags, idx, w) in zip(self.lambdas, self.part_args, explicit):
                frequencies.append(freq)
                basis += tags
                composite = np.zeros((idx.shape[0], self.order), dtype=np.int64)
                for k, position in enumerate(pargs):
                    composite[:, position] = idx[:, k] + offset
                index.append(composite)
                weights.append(lam * w)
                offset += freq.shape[0]
            frequencies = np.concatenate(frequencies)
            index = np.concatenate(index)
            weights = np.concatenate(weights)
        else:
            features = []
            for combo in product(*[range(len(w)) for _, _, _, w in explicit]):
                per_position = [[] for _ in range(self.order)]
                weight = 1.0
                for part, term, pargs in zip(explicit, combo, self.part_args):
                    freq, tags, idx, w = part
                    weight *= w[term]
                    for k, position in enumerate(pargs):
                        per_position[position].append((freq[idx[term, k]], tags[idx[term, k]]))
                expanded = [_trig_product(factors) if factors else [(np.zeros(self.dim), BasisModes.COS.value, 1.0)]
                            for factors in per_position]
                for choice in product(*expanded):
                    row = []
                    coef = weight
                    for freq, tag, c in choice:
                        row.append(len(features))
                        features.append((freq, tag))
                        coef *= c
                    index.append(row)
                    weights.append(coef)
            frequencies = np.array([f for f, _ in features]).reshape(-1, self.dim)
            basis = [tag for _, tag in features]
        return ExpandedKernel(
            order=self.order, dim=self.dim, frequencies=frequencies, basis=tuple(basis), index=np.asarray(index), weights=np.asarray(weights),
            F=self.F, B=self.B, mu=self.mu, target_t=self.target_t, domain=self.domain, lip_L=self.lip_L, seed=self.seed,
            symmetrized=self.symmetrized,
        )

    def to_dict(self) -> dict:
        document = {
            "m": self.order,
            "d": self.dim,
            "F": self.F,
            "B": self.B,
            "mu": self.mu,
            "t": self.target_t,
            "domain": self.domain.to_dict(),
            "lip_L": self.lip_L,
            "seed": self.seed,
            "symmetrized": self.symmetrized,
            "combinator": self.combinator,
        }
        if self.is_leaf:
            document.update({
                "frequencies": self.frequencies.tolist(),
                "basis": list(self.basis),
                "coeffs": {"index": self.index.tolist(), "weights": self.weights.tolist()},
            })
        else:
            document.update({
                "parts": [p.to_dict() for p in self.parts],
                "part_args": [list(a) for a in self.part_args],
                "lambdas": list(self.lambdas),
            })
        return document

    @classmethod
    def from_dict(cls, document: dict) -> "ExpandedKernel":
        common = dict(
            order=document["m"], dim=document["d"], F=document["F"], B=document["B"], mu=document["mu"],
            target_t=document["t"], domain=ApproxDomain.from_dict(document["domain"]), lip_L=document["lip_L"],
            seed=document["seed"], symmetrized=document["symmetrized"],
        )
        if document["combinator"] is None:
            return cls(frequencies=np.array(document["frequencies"], dtype=float), basis=tuple(document["basis"]),
                       index=np.array(document["coeffs"]["index"], dtype=np.int64), weights=np.array(document["coeffs"]["weights"], dtype=float),
                       **common)
        return cls(frequencies=np.empty((0, document["d"])), basis=(), index=np.empty((0, document["m"])), weights=np.empty(0),
                   combinator=document["combinator"], parts=tuple(cls.from_dict(p) for p in document["parts"]),
                   part_args=tuple(tuple(a) for a in document["part_args"]), lambdas=tuple(document["lambdas"]), **common)


def to_json(expanded: ExpandedKernel) -> str:
    """Serializes an expansion; floats are written in shortest round-trip form so decoding is bit-exact"""
    return json.dumps(expanded.to_dict(), sort_keys=True)


def from_json(text: str) -> ExpandedKernel:
    return ExpandedKernel.from_dict(json.loads(text))


@dataclass(frozen=True)
class ExpansionReport:
    """Empirical certificate of an expansion's sup error on its domain"""
    grid_sup_error: float
    grid_resolution: int
    K_used: int
    seed: Optional[int]
    target_t: float
    passed: bool
    random_sup_error: float = 0.0
    points_checked: int = 0

    def __post_init__(self):
        if self.passed != (self.grid_sup_error <= self.target_t):
            raise ValueError(f"Inconsistent report: passed={self.passed} with error {self.grid_sup_error} and target {self.target_t}")


### Constructors

def _as_rng(rng) -> Tuple[np.random.Generator, Optional[int]]:
    """Accepts a Generator or an integer seed; returns the generator and the seed when known"""
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng)), int(rng)
    if rng is None:
        raise ValueError("A random generator or seed is required")
    return rng, None


def rff_expand_pd(spec: KernelSpec, M: float, t: float, K: int, rng, domain: Optional[ApproxDomain] = None) -> ExpandedKernel:
    """Random Fourier feature expansion of a positive definite shift-invariant kernel of order 2

    f0(x - y) ~ (f0(0)/K) sum_j [cos(2 pi u_j.x) cos(2 pi u_j.y) + sin(2 pi u_j.x) sin(2 pi u_j.y)]
    with u_j drawn from f0^ / f0(0).
    """
    rng, seed = _as_rng(rng)
    if not (spec.has(KernelTags.SHIFT_INVARIANT) and spec.has(KernelTags.POSITIVE_DEFINITE)) or spec.spectral is None:
        raise UnsupportedKernelError(f"Kernel {spec.name} is not a shift-invariant positive definite kernel with a known transform")
    spectral = spec.spectral
    if spectral.real_neg_mass > 0 or spectral.imag_pos_mass > 0 or spectral.imag_neg_mass > 0 or not spectral.sampleable:
        raise UnsupportedKernelError(f"Kernel {spec.name} has a signed or unsampleable transform")
    if t <= 0 or M <= 0:
        raise ValueError(f"Target error and box halfwidth must be positive, found t={t}, M={M}")
    if K < 1:
        raise ValueError(f"Number of frequencies must be positive, found {K}")
    f0_at_0 = float(spec.profile(np.zeros((1, spec.dim)))[0]) if spec.factors is not None else spectral.real_pos_mass
    u = spectral.sample(rng, SpectralParts.REAL_POS.value, K)
    rows = np.arange(K)
    index = np.empty((2 * K, 2), dtype=np.int64)
    index[0::2] = np.column_stack([2 * rows, 2 * rows])
    index[1::2] = np.column_stack([2 * rows + 1, 2 * rows + 1])
    return ExpandedKernel(
        order=2,
        dim=spec.dim,
        frequencies=np.repeat(u, 2, axis=0),
        basis=(BasisModes.COS.value, BasisModes.SIN.value) * K,
        index=index,
        weights=np.full(2 * K, f0_at_0 / K),
        F=2 * f0_at_0,
        B=1.0,
        mu=1.0,
        target_t=t,
        domain=domain if domain is not None else ApproxDomain(order=2, dim=spec.dim, halfwidth=M),
        lip_L=float(2 * pi * np.max(np.linalg.norm(u, axis=1))),
        seed=seed,
    )


_PART_LAYOUT = [
    (SpectralParts.REAL_POS.value, 1.0, BasisModes.COS.value),
    (SpectralParts.REAL_NEG.value, -1.0, BasisModes.COS.value),
    (SpectralParts.IMAG_POS.value, -1.0, BasisModes.SIN.value),
    (SpectralParts.IMAG_NEG.value, 1.0, BasisModes.SIN.value),
]


def _split_sizes(D, masses) -> List[int]:
    """Per-part sample sizes; a single total is split proportionally to the squared masses"""
    if isinstance(D, (int, np.integer)):
        if D < 1:
            raise ValueError(f"Number of frequencies must be positive, found {D}")
        squares = np.array([m ** 2 for m in masses])
        sizes = [max(1, int(round(D * s / squares.sum()))) if s > 0 else 0 for s in squares]
        return sizes
    sizes = [int(s) for s in D]
    if len(sizes) != 4 or any(s < 0 for s in sizes):
        raise ValueError(f"Per-part sample sizes must be 4 non-negative integers, found {D}")
    return [s if mass > 0 else 0 for s, mass in zip(sizes, masses)]


def rff_expand_general(spec: KernelSpec, M: float, t: float, D: Union[int, Sequence[int]], rng,
                       domain: Optional[ApproxDomain] = None, symmetrize: bool = True) -> ExpandedKernel:
    """Random Fourier feature expansion from the four sign parts of an integrable transform

    f~ = A_g+ s_1 - A_g- s_2 - A_h+ s_3 + A_h- s_4, each s_i the Monte Carlo average of cos (real
    parts) or sin (imaginary parts) of 2 pi sum_k u_k.x_k over frequencies drawn from its part.
    With symmetrize=False the expansion approximates f itself, for use as a factor of a
    symmetrized product.
    """
    rng, seed = _as_rng(rng)
    spectral = spec.spectral
    if spectral is None or not spectral.sampleable:
        raise UnsupportedKernelError(f"Kernel {spec.name} has no sign-part samplers")
    if t <= 0 or M <= 0:
        raise ValueError(f"Target error and box halfwidth must be positive, found t={t}, M={M}")
    m, d = spec.order, spec.dim
    if spectral.shift_invariant and (m != 2 or spectral.dim != d):
        raise UnsupportedKernelError(f"Shift-invariant transform of dimension {spectral.dim} does not fit kernel {spec.name}")
    if not spectral.shift_invariant and spectral.dim != m * d:
        raise UnsupportedKernelError(f"Transform dimension {spectral.dim} does not match md = {m * d}")
    masses = [spectral.masses[part] for part, _, _ in _PART_LAYOUT]
    sizes = _split_sizes(D, masses)
    frequencies, basis, index, weights = [], [], [], []
    offset = 0
    max_norm = 0.0
    for (part, sign, kind), mass, size in zip(_PART_LAYOUT, masses, sizes):
        if size == 0:
            continue
        u = spectral.sample(rng, part, size)
        per_arg = [u, -u] if spectral.shift_invariant else [u[:, k * d:(k + 1) * d] for k in range(m)]
        max_norm = max(max_norm, max(float(np.max(np.linalg.norm(a, axis=1))) for a in per_arg))
        # Feature layout per sample: for each argument k, cos then sin of its frequency
        block = np.stack([np.stack([a, a], axis=1) for a in per_arg], axis=1).reshape(size * 2 * m, d)
        frequencies.append(block)
        basis += [BasisModes.COS.value, BasisModes.SIN.value] * (m * size)
        base = offset + 2 * m * np.arange(size)
        for coef, kinds in _angle_sum_terms(m, kind):
            cols = [base + 2 * k + (kinds[k] == BasisModes.SIN.value) for k in range(m)]
            index.append(np.column_stack(cols))
            weights.append(np.full(size, sign * mass / size * coef))
        offset += 2 * m * size
    return ExpandedKernel(
        order=m,
        dim=d,
        frequencies=np.concatenate(frequencies),
        basis=tuple(basis),
        index=np.concatenate(index),
        weights=np.concatenate(weights),
        F=2 ** m * spectral.l1_norm,
        B=1.0,
        mu=1.0,
        target_t=t,
        domain=domain if domain is not None else ApproxDomain(order=m, dim=d, halfwidth=M),
        lip_L=2 * pi * max_norm,
        seed=seed,
        symmetrized=symmetrize,
    )


def exact_linear_expansion(d: int, M: float) -> ExpandedKernel:
    """x.y = sum_l x_l y_l with coordinate bases, exact on [-M, M]^{2d}"""
    frequencies = np.eye(d)
    return ExpandedKernel(
        order=2, dim=d, frequencies=frequencies, basis=(BasisModes.COORD.value,) * d,
        index=np.column_stack([np.arange(d), np.arange(d)]), weights=np.ones(d),
        F=float(d), B=float(M), mu=1.0, target_t=0.0, domain=ApproxDomain(order=2, dim=d, halfwidth=M),
    )


def constant_expansion(order: int, dim: int, M: float, value: float = 1.0) -> ExpandedKernel:
    """The constant kernel as a one-term expansion"""
    return ExpandedKernel(
        order=order, dim=dim, frequencies=np.zeros((1, dim)), basis=(BasisModes.COS.value,),
        index=np.zeros((1, order), dtype=np.int64), weights=np.array([value]),
        F=abs(value), B=1.0, mu=1.0, target_t=0.0, domain=ApproxDomain(order=order, dim=dim, halfwidth=M),
    )


def sample_size_heuristic(t: float, M: float, m: int, d: int, q: float, mu_q: float, l1_norm: float, c0: float = 1.0) -> int:
    """Number of frequencies making the sup error of a random Fourier expansion at most t with high probability"""
    if min(t, M, mu_q, l1_norm, c0) <= 0:
        raise ValueError(f"t, M, mu_q, l1_norm and c0 must be positive, found ({t}, {M}, {mu_q}, {l1_norm}, {c0})")
    if q < 1:
        raise ValueError(f"Moment order q must be at least 1, found {q}")
    md = m * d
    diam = 2 * M * math.sqrt(md)
    c = 3 * math.sqrt(md / pi)
    log_term = math.log(max(8 * pi * c * diam * l1_norm ** (1 - 1 / q) * mu_q / t, 2.0))
    return int(math.ceil(c0 * md * l1_norm ** 2 / t ** 2 * log_term))


def mollify(spec: KernelSpec, h: float) -> KernelSpec:
    """Convolution of a product-form kernel profile with N(0, h^2 I); the transform is damped by exp(-2 pi^2 h^2 ||u||^2)"""
    if h <= 0:
        raise ValueError(f"Mollification bandwidth must be positive, found {h}")
    if spec.factors is None or spec.spectral is None:
        raise UnsupportedKernelError(f"Kernel {spec.name} has no product-form spectral density to mollify")
    factors = [f.mollified(h) for f in spec.factors]
    tags = set(spec.tags) - {KernelTags.PIECEWISE_CONSTANT_FACTORS.value}
    mollified = product_kernel(f"{spec.name}_h{h:g}", factors, tags=tags, sup_bound=spec.sup_bound)
    if not spec.has(KernelTags.SYMMETRIC):
        mollified = replace(mollified, tags=mollified.tags - {KernelTags.SYMMETRIC.value})
    return mollified


def choose_h_lipschitz(L: float, t: float, md: int) -> float:
    """Bandwidth keeping the mollification bias of an L-Lipschitz kernel below t/2"""
    if L <= 0 or t <= 0:
        raise ValueError(f"L and t must be positive, found L={L}, t={t}")
    return t / (2 * gamma_constants(md)[1] * L)


def choose_h_discontinuous(M2: float, d: int, Delta: float, t: float) -> float:
    """Bandwidth for kernels whose jumps are kept at least M2 away"""
    if min(M2, Delta, t) <= 0:
        raise ValueError(f"M2, Delta and t must be positive, found ({M2}, {Delta}, {t})")
    return M2 / math.sqrt(math.log(max(2 * d * Delta ** d / t, 2.0))) / math.sqrt(2)


def _require(kind, inputs, names):
    missing = [n for n in names if inputs.get(n) is None]
    if missing:
        raise ValueError(f"Regime {kind} needs inputs {missing}")


def expansion_F(kind: str, **inputs) -> float:
    """Closed-form coefficient-sum constant F of the requested regime

    B1: m, l1_norm. B2: m, d, eps, L_F. B3: m, d, L_F, L, t. B4: central_masses, tail_constants, h.
    For B2/B3, shift_invariant=True uses the reduced constants Gamma(d) instead of Gamma(md).
    """
    if kind not in [e.value for e in ExpansionRegimes]:
        raise ValueError(f"Unknown regime {kind}, accepted regimes are {[e.value for e in ExpansionRegimes]}")
    if kind == ExpansionRegimes.B1.value:
        _require(kind, inputs, ["m", "l1_norm"])
        return 2 ** inputs["m"] * inputs["l1_norm"]
    if kind in (ExpansionRegimes.B2.value, ExpansionRegimes.B3.value):
        _require(kind, inputs, ["m", "d", "L_F"] + (["eps"] if kind == ExpansionRegimes.B2.value else ["L", "t"]))
        m = inputs["m"]
        n = inputs["d"] if inputs.get("shift_invariant", False) else m * inputs["d"]
        c1, c2 = gamma_constants(n)
        if kind == ExpansionRegimes.B2.value:
            return (1 + 1 / inputs["eps"]) * 2 ** m * c1 * inputs["L_F"]
        return 2 ** (m + 1) * c1 * inputs["L_F"] * math.log(max(2 * c2 * inputs["L"] / inputs["t"], 2.0))
    _require(kind, inputs, ["central_masses", "tail_constants", "h"])
    if len(inputs["central_masses"]) != len(inputs["tail_constants"]):
        raise ValueError("B4 needs one central mass and one tail constant per coordinate")
    log_term = math.log(max(1 / inputs["h"], 2.0))
    return 4 * math.prod(mass + 4 * c * log_term for mass, c in zip(inputs["central_masses"], inputs["tail_constants"]))


def lipschitz_constant_tau(t: float, M: float, m: int, d: int, q: float, mu_q: float, l1_norm: float) -> float:
    """Lipschitz constant L of the bases of a random Fourier expansion, for tau-mixing bounds"""
    if min(t, M, mu_q, l1_norm) <= 0 or q < 1:
        raise ValueError(f"Inputs must be positive with q >= 1, found t={t}, M={M}, q={q}, mu_q={mu_q}, l1_norm={l1_norm}")
    md = m * d
    inner = mu_q ** q * md * l1_norm ** 2 / t ** 2 * math.log(48 * pi * M * md * l1_norm ** (1 - 1 / q) * mu_q / t)
    return inner ** (1 / q)


### Combinators

def budget_add(t: float, lambdas: Sequence[float]) -> List[float]:
    """Per-part error budgets making a weighted sum of expansions accurate to t"""
    total = sum(abs(lam) for lam in lambdas)
    if total == 0:
        raise ValueError("At least one nonzero weight is required")
    return [t / total] * len(lambdas)


def budget_mul(t: float, bounds: Sequence[float]) -> List[float]:
    """Per-part error budgets making a product of expansions with sup bounds M^i accurate to t"""
    if any(b < 1 for b in bounds):
        raise ValueError(f"Part bounds must be at least 1, found {list(bounds)}")
    denominator = len(bounds) * math.prod(b + t for b in bounds)
    return [t * (b + t) / denominator for b in bounds]


def _composite(parts, args, t, symmetrize, combinator, F, lambdas=()):
    parts = tuple(parts)
    if not parts:
        raise ValueError("At least one part is required")
    dims = {p.dim for p in parts}
    if len(dims) != 1:
        raise ValueError(f"All parts must share the point dimension, found {sorted(dims)}")
    args = tuple(tuple(a) for a in args) if args is not None else tuple(tuple(range(p.order)) for p in parts)
    if len(args) != len(parts) or any(len(a) != p.order or len(set(a)) != p.order for a, p in zip(args, parts)):
        raise ValueError(f"Argument maps {args} do not fit the part orders {[p.order for p in parts]}")
    order = max(max(a) for a in args) + 1
    dim = dims.pop()
    domain = None
    for p in parts:
        lifted = p.domain.reshaped(order, dim)
        domain = lifted if domain is None else domain.intersect(lifted)
    lips = [p.lip_L for p in parts]
    return ExpandedKernel(
        order=order, dim=dim, frequencies=np.empty((0, dim)), basis=(), index=np.empty((0, order)), weights=np.empty(0),
        F=F, B=max(p.B for p in parts), mu=max(p.mu for p in parts), target_t=t, domain=domain,
        lip_L=max(lips) if all(l is not None for l in lips) else None, symmetrized=symmetrize,
        combinator=combinator, parts=parts, part_args=args, lambdas=tuple(float(l) for l in lambdas),
    )


def _check_budgets(parts, budgets):
    for k, (p, budget) in enumerate(zip(parts, budgets)):
        if p.target_t > budget * (1 + 1e-12):
            raise ValueError(f"Part {k} has error budget {p.target_t}, above the allowed {budget}")


def combine_add(parts: Sequence[ExpandedKernel], lambdas: Sequence[float], t: float,
                args: Optional[Sequence[Sequence[int]]] = None, symmetrize: bool = True) -> ExpandedKernel:
    """Weighted sum of expansions: F = sum |lambda_i| F^i, B and mu the maxima over parts"""
    if len(parts) != len(lambdas):
        raise ValueError(f"Need one weight per part, found {len(lambdas)} weights for {len(parts)} parts")
    _check_budgets(parts, budget_add(t, lambdas))
    F = sum(abs(lam) * p.F for lam, p in zip(lambdas, parts))
    return _composite(parts, args, t, symmetrize, CombineModes.SUM.value, F, lambdas)


def combine_mul(parts: Sequence[ExpandedKernel], bounds: Sequence[float], t: float,
                args: Optional[Sequence[Sequence[int]]] = None, symmetrize: bool = True) -> ExpandedKernel:
    """Product of expansions: F = prod F^i, B and mu the maxima over parts"""
    if len(parts) != len(bounds):
        raise ValueError(f"Need one sup bound per part, found {len(bounds)} bounds for {len(parts)} parts")
    _check_budgets(parts, budget_mul(t, bounds))
    F = math.prod(p.F for p in parts)
    return _composite(parts, args, t, symmetrize, CombineModes.PRODUCT.value, F)


### Rank kernels

def sign_expansion(M: float, M1: float, M2: float, t: float, K: int, rng, h: Optional[float] = None) -> Tuple[KernelSpec, ExpandedKernel, float]:
    """Expansion of sign(x - y) on [-M, M]^2 off bands of width M2 around its jumps

    Returns the sign kernel, the unsymmetrized expansion of its mollified truncation and the bandwidth.
    """
    if M > M1:
        raise ValueError(f"Box halfwidth M={M} exceeds the truncation level M1={M1}")
    spec = sign_kernel(M1)
    h = h if h is not None else choose_h_discontinuous(M2, 1, 1.0, t)
    expanded = rff_expand_general(mollify(spec, h), M, t, K, rng, domain=kernel_domain(spec, M, M2), symmetrize=False)
    return spec, expanded, h


def spearman_parts(M: float, M1: float, M2: float, t: float, K: int, rng,
                   h: Optional[float] = None) -> List[Tuple[KernelSpec, ExpandedKernel]]:
    """Sign kernels and expansions of the two factors of the Spearman kernel, each within its product budget"""
    rng, _ = _as_rng(rng)
    parts = []
    for budget in budget_mul(t, [1.0, 1.0]):
        spec, expanded, _ = sign_expansion(M, M1, M2, budget, K, rng, h=h)
        parts.append((spec, expanded))
    return parts


def spearman_from_parts(parts: Sequence[Tuple[KernelSpec, ExpandedKernel]], t: float, seed: Optional[int] = None) -> ExpandedKernel:
    """sign(x1 - y1) on arguments (0, 1) times sign(x2 - z2) on arguments (0, 2), symmetrized"""
    if len(parts) != 2:
        raise ValueError(f"The Spearman kernel has two sign factors, found {len(parts)}")
    embedded = [expanded.embed(2, [coord]) for coord, (_, expanded) in enumerate(parts)]
    return replace(combine_mul(embedded, [1.0, 1.0], t, args=[(0, 1), (0, 2)], symmetrize=True), seed=seed)


def spearman_expansion(M: float, M1: float, M2: float, t: float, K: int, rng, h: Optional[float] = None) -> ExpandedKernel:
    """Expansion of the symmetrized Spearman kernel as the product of two truncated-sign expansions

    F grows like log^2(M1/M2) + log^2 log(1/t) through the bandwidth of the two factors.
    """
    rng, seed = _as_rng(rng)
    return spearman_from_parts(spearman_parts(M, M1, M2, t, K, rng, h=h), t, seed=seed)


### Certification

def _grid_tuples(axis_points: np.ndarray, order: int) -> np.ndarray:
    """All m-tuples of grid points, shape (G^m, m, d), first argument slowest"""
    g = axis_points.shape[0]
    grids = np.meshgrid(*[np.arange(g)] * order, indexing="ij")
    return np.stack([axis_points[idx.ravel()] for idx in grids], axis=1)


def _evaluate_spec(spec: KernelSpec, tuples: np.ndarray, block: int = 200_000) -> np.ndarray:
    out = np.empty(tuples.shape[0])
    for start in range(0, tuples.shape[0], block):
        chunk = tuples[start:start + block]
        out[start:start + block] = spec.func(*[chunk[:, k, :] for k in range(spec.order)])
    return out


def verify_sup_error(spec: KernelSpec, expanded: ExpandedKernel, grid_res: int = 200, rng=0, random_factor: int = 10) -> ExpansionReport:
    """Maximum of |f - f~| over the tensor grid of the domain box plus uniform random in-domain points"""
    if grid_res < 16:
        raise ValueError(f"Grid resolution must be at least 16, found {grid_res}")
    if (spec.order, spec.dim) != (expanded.order, expanded.dim):
        raise ValueError(f"Kernel shape ({spec.order}, {spec.dim}) does not match expansion shape ({expanded.order}, {expanded.dim})")
    md = expanded.order * expanded.dim
    if md not in GRID_CAPS:
        raise ValueError(f"Grid certification is limited to md <= {max(GRID_CAPS)}, found md = {md}")
    rng, _ = _as_rng(rng)
    resolution = min(grid_res, GRID_CAPS[md])
    domain = expanded.domain
    axis = np.linspace(-domain.halfwidth, domain.halfwidth, resolution)
    axis_points = np.stack([a.ravel() for a in np.meshgrid(*[axis] * expanded.dim, indexing="ij")], axis=1)
    tuples = _grid_tuples(axis_points, expanded.order)
    inside = domain.contains(tuples)
    if not inside.any():
        raise DomainError("The tensor grid has no point inside the approximation domain")
    errors = np.abs(_evaluate_spec(spec, tuples) - expanded.evaluate_grid(axis_points))
    grid_error = float(np.max(errors[inside]))
    random_points = domain.sample(rng, random_factor * grid_res)
    random_error = 0.0
    if len(random_points):
        approx = expanded.evaluate(*[random_points[:, k, :] for k in range(expanded.order)])
        random_error = float(np.max(np.abs(_evaluate_spec(spec, random_points) - approx)))
    sup_error = max(grid_error, random_error)
    logger.debug(f"Sup error of {spec.name} expansion: grid {grid_error:.4g}, random {random_error:.4g}")
    return ExpansionReport(
        grid_sup_error=sup_error,
        grid_resolution=resolution,
        K_used=expanded.n_features,
        seed=expanded.seed,
        target_t=expanded.target_t,
        passed=sup_error <= expanded.target_t,
        random_sup_error=random_error,
        points_checked=int(inside.sum()) + len(random_points),
    )


def product_error_bound(errors: Sequence[float], bounds: Sequence[float]) -> float:
    """prod(b_i + e_i) - prod(b_i): sup error of a product whose parts satisfy |f_i| <= b_i and |f_i - f~_i| <= e_i"""
    if len(errors) != len(bounds):
        raise ValueError(f"Need one sup bound per part error, found {len(bounds)} bounds for {len(errors)} errors")
    return math.prod(b + e for b, e in zip(bounds, errors)) - math.prod(bounds)


def verify_product(parts: Sequence[Tuple[KernelSpec, ExpandedKernel]], expanded: ExpandedKernel, bounds: Sequence[float],
                   grid_res: int = 200, rng=0, random_factor: int = 10) -> ExpansionReport:
    """Certificate of a product expansion from grid certificates of its parts

    Each part is certified against its own kernel; the bound holds on the intersection of the
    part domains, and symmetrization keeps it because that intersection is permutation invariant.
    """
    if expanded.combinator != CombineModes.PRODUCT.value or len(parts) != len(expanded.parts):
        raise ValueError(f"Expected a product of {len(parts)} parts")
    rng, _ = _as_rng(rng)
    reports = [verify_sup_error(spec, part, grid_res=grid_res, rng=rng, random_factor=random_factor) for spec, part in parts]
    for (spec, _), report in zip(parts, reports):
        logger.debug(f"Part {spec.name}: sup error {report.grid_sup_error:.4g} against budget {report.target_t:.4g}")
    error = product_error_bound([r.grid_sup_error for r in reports], bounds)
    return ExpansionReport(
        grid_sup_error=error,
        grid_resolution=min(r.grid_resolution for r in reports),
        K_used=expanded.n_features,
        seed=expanded.seed,
        target_t=expanded.target_t,
        passed=error <= expanded.target_t,
        random_sup_error=product_error_bound([r.random_sup_error for r in reports], bounds),
        points_checked=sum(r.points_checked for r in reports),
    )
