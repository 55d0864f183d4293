"""Kernels of order m on (R^d)^m, their structural metadata, spectral densities and approximation domains.

Fourier convention throughout: f^(u) = int f(x) exp(-2 pi i u.x) dx.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from itertools import permutations
import logging
import math
import numpy as np
from numpy import pi
from ligo.segments import segment, segmentlist
from scipy.integrate import cumulative_trapezoid, quad, trapezoid
from scipy.special import log_ndtr, ndtr, voigt_profile
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from mixvstat.errors import UnsupportedKernelError

logger = logging.getLogger(__name__)

# Knots of the inverse-CDF grid used for spectral factors without a direct sampler
GRID_KNOTS = 2 ** 14
# Acceptance-rate floor of the rejection sampler for mollified factors
REJECTION_FLOOR = 1e-3
# Nodes of the Gauss-Hermite rule used to smooth factors without a closed form
HERMITE_NODES = 80


class KernelTags(Enum):
    """Structural properties a kernel may declare"""
    SHIFT_INVARIANT = "shift_invariant"
    PRODUCT_FORM = "product_form"
    POSITIVE_DEFINITE = "positive_definite"
    PIECEWISE_CONSTANT_FACTORS = "piecewise_constant_factors"
    SYMMETRIC = "symmetric"


class Parity(Enum):
    """Parity of a univariate factor, deciding whether its transform is real or imaginary"""
    EVEN = "even"  # real transform
    ODD = "odd"  # purely imaginary transform


class SpectralParts(Enum):
    """The four sign parts of a transform: positive/negative parts of its real and imaginary components"""
    REAL_POS = "real_pos"
    REAL_NEG = "real_neg"
    IMAG_POS = "imag_pos"
    IMAG_NEG = "imag_neg"


### Univariate factors

def _smooth_piecewise_linear(x, h, pieces):
    """Convolution of a piecewise linear function with the N(0, h^2) density

    pieces is a list of (a, b, c0, c1) meaning c0 + c1*y on [a, b] and zero elsewhere.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for a, b, c0, c1 in pieces:
        lo = (a - x) / h
        hi = (b - x) / h
        out += (c0 + c1 * x) * (ndtr(hi) - ndtr(lo))
        if c1 != 0:
            out += c1 * h * (np.exp(-0.5 * lo ** 2) - np.exp(-0.5 * hi ** 2)) / math.sqrt(2 * pi)
    return out


def _smooth_hermite(func, x, h, nodes=HERMITE_NODES):
    """E[func(x + h Z)] by Gauss-Hermite quadrature, for factors without a closed-form smoothing"""
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    x = np.asarray(x, dtype=float)
    values = func(x[..., None] + h * z)
    return values @ w / math.sqrt(2 * pi)


@dataclass(frozen=True)
class Factor:
    """Univariate factor h of a product-form shift-invariant kernel f0(x) = prod_l h_l(x_l)"""
    name: str
    func: Callable[[np.ndarray], np.ndarray]  # vectorized evaluation
    transform: Callable[[np.ndarray], np.ndarray]  # vectorized closed-form Fourier transform (complex)
    parity: str = Parity.EVEN.value
    nonnegative_transform: bool = False  # transform is real and >= 0 (factor is positive definite)
    integrable: bool = True  # transform belongs to L1
    exact_l1: Optional[float] = None  # closed-form L1 norm of the transform, if known
    half_support: Optional[float] = None  # support is [-half_support, half_support], None for unbounded
    jumps: Tuple[float, ...] = ()  # jump locations
    sup_bound: float = 1.0  # sup |h|
    direct_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None  # samples |h^| normalized
    smoother: Optional[Callable[[np.ndarray, float], np.ndarray]] = None  # closed-form (h * N(0, s^2))(x)
    tail_constant: Optional[float] = None  # C such that |h^(u)| <= C/|u| for piecewise constant factors
    central_mass_bound: Optional[float] = None  # bound on int_{-1}^{1} |h^|
    bandwidth: float = 0.0  # Gaussian smoothing already applied
    grid_span: Tuple[float, float] = (64.0, 1e5)  # (end of linear part, end of geometric part) of the sampling grid

    def __post_init__(self):
        if self.parity not in [e.value for e in Parity]:
            raise ValueError(f"A Factor was defined with parity {self.parity}, which is not an accepted parity ({[e.value for e in Parity]})")
        if self.sup_bound <= 0:
            raise ValueError(f"A Factor must be defined with positive sup bound, found {self.sup_bound}")

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    def signed(self, u):
        """Real-valued part carrying the transform: Re h^ for even factors, Im h^ for odd ones"""
        values = self.transform(np.asarray(u, dtype=float))
        return np.real(values) if self.parity == Parity.EVEN.value else np.imag(values)

    @cached_property
    def _grid(self):
        """Returns a tuple with:
            - Knots on [0, far end] where the transform is tabulated
            - Cumulative integral of |h^| over the knots
            - Positive mass of the signed part over the real line
            - Negative mass of the signed part over the real line
        """
        lin_end, far_end = self.grid_span
        n_lin = 3 * GRID_KNOTS // 4
        knots = np.linspace(0.0, lin_end, n_lin)
        if far_end > lin_end:
            knots = np.concatenate([knots, np.geomspace(lin_end, far_end, GRID_KNOTS - n_lin + 1)[1:]])
        values = self.signed(knots)
        cdf = cumulative_trapezoid(np.abs(values), knots, initial=0.0)
        pos_half = trapezoid(np.maximum(values, 0.0), knots)
        neg_half = trapezoid(np.maximum(-values, 0.0), knots)
        if self.parity == Parity.EVEN.value:
            return knots, cdf, 2 * pos_half, 2 * neg_half
        # Odd signed parts put on the negative half-line the mirror image of the positive half-line
        return knots, cdf, pos_half + neg_half, pos_half + neg_half

    @property
    def l1_norm(self) -> float:
        """L1 norm of the transform"""
        if not self.integrable:
            return math.inf
        if self.exact_l1 is not None:
            return self.exact_l1
        _, _, pos, neg = self._grid
        return pos + neg

    @property
    def masses(self) -> Tuple[float, float]:
        """Positive and negative L1 masses of the signed part of the transform"""
        if not self.integrable:
            return math.inf, math.inf
        if self.nonnegative_transform:
            return self.l1_norm, 0.0
        _, _, pos, neg = self._grid
        return pos, neg

    def sample_abs(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draws frequencies distributed as |h^| / ||h^||_1"""
        if not self.integrable:
            raise UnsupportedKernelError(f"Factor {self.name} has a non-integrable transform and cannot be sampled, mollify it first")
        if self.direct_sampler is not None:
            return self.direct_sampler(rng, size)
        knots, cdf, _, _ = self._grid
        radius = np.interp(rng.uniform(0.0, cdf[-1], size), cdf, knots)
        return radius * rng.choice(np.array([-1.0, 1.0]), size)

    def central_mass(self) -> float:
        """int_{-1}^{1} |h^(u)| du by adaptive quadrature"""
        value, _ = quad(lambda u: float(np.abs(self.transform(np.array([u]))[0])), -1.0, 1.0, limit=400, points=[0.0])
        return value

    def smoothed(self, x, h: float) -> np.ndarray:
        """Evaluates the convolution of the factor with the N(0, h^2) density"""
        if h < 0:
            raise ValueError(f"Smoothing bandwidth must be non-negative, found {h}")
        if h == 0:
            return self(x)
        if self.smoother is not None:
            return self.smoother(np.asarray(x, dtype=float), h)
        return _smooth_hermite(self.func, x, h)

    def mollified(self, h: float) -> "Factor":
        """Factor convolved with N(0, h^2); its transform is damped by exp(-2 pi^2 h^2 u^2)"""
        if h <= 0:
            raise ValueError(f"Mollification bandwidth must be positive, found {h}")
        base = self
        damping = lambda u: np.exp(-2 * pi ** 2 * h ** 2 * np.asarray(u) ** 2)
        lin_end = max(8.0, 1.7 / h)
        mollified = Factor(
            name=f"{base.name}*N(0,{h:g}^2)",
            func=lambda x: base.smoothed(x, h),
            transform=lambda u: base.transform(u) * damping(u),
            parity=base.parity,
            nonnegative_transform=base.nonnegative_transform,
            integrable=True,
            exact_l1=float(base.smoothed(np.array([0.0]), h)[0]) if base.nonnegative_transform else None,
            half_support=None,
            jumps=(),
            sup_bound=base.sup_bound,
            smoother=lambda x, s: base.smoothed(x, math.hypot(h, s)),
            bandwidth=math.hypot(base.bandwidth, h),
            grid_span=(lin_end, 2 * lin_end),
        )
        if base.integrable:
            acceptance = mollified.l1_norm / base.l1_norm
            if acceptance >= REJECTION_FLOOR:
                return replace(mollified, direct_sampler=_rejection_sampler(base, damping, acceptance))
            logger.debug(f"Rejection acceptance {acceptance:.2e} below floor for {base.name}, using grid sampling")
        return mollified


def _rejection_sampler(base, damping, acceptance):
    """Samples the damped density by drawing from the undamped one and accepting with probability damping(u)"""
    def sampler(rng, size):
        accepted = []
        remaining = size
        while remaining > 0:
            batch = int(math.ceil(1.2 * remaining / acceptance)) + 16
            u = base.sample_abs(rng, batch)
            u = u[rng.uniform(size=batch) < damping(u)]
            accepted.append(u[:remaining])
            remaining -= len(accepted[-1])
        return np.concatenate(accepted)
    return sampler


def gaussian_factor() -> Factor:
    return Factor(
        name="gaussian",
        func=lambda x: np.exp(-0.5 * x ** 2),
        transform=lambda u: math.sqrt(2 * pi) * np.exp(-2 * pi ** 2 * u ** 2) + 0j,
        nonnegative_transform=True,
        exact_l1=1.0,
        direct_sampler=lambda rng, size: rng.normal(scale=1 / (2 * pi), size=size),
        # Gaussian variances add under convolution
        smoother=lambda x, s: np.exp(-0.5 * x ** 2 / (1 + s ** 2)) / math.sqrt(1 + s ** 2),
    )


def laplacian_factor() -> Factor:
    return Factor(
        name="laplacian",
        func=lambda x: np.exp(-np.abs(x)),
        transform=lambda u: 2 / (1 + 4 * pi ** 2 * u ** 2) + 0j,
        nonnegative_transform=True,
        exact_l1=1.0,
        direct_sampler=lambda rng, size: rng.standard_cauchy(size) / (2 * pi),
        smoother=lambda x, s: np.exp(-x + 0.5 * s ** 2 + log_ndtr(x / s - s)) + np.exp(x + 0.5 * s ** 2 + log_ndtr(-x / s - s)),
    )


def cauchy_factor() -> Factor:
    return Factor(
        name="cauchy",
        func=lambda x: 2 / (1 + x ** 2),
        transform=lambda u: 2 * pi * np.exp(-2 * pi * np.abs(u)) + 0j,
        nonnegative_transform=True,
        exact_l1=2.0,
        sup_bound=2.0,
        direct_sampler=lambda rng, size: rng.laplace(scale=1 / (2 * pi), size=size),
        # Lorentzian convolved with a Gaussian is the Voigt profile
        smoother=lambda x, s: 2 * pi * voigt_profile(x, s, 1.0),
    )


def hat_factor() -> Factor:
    return Factor(
        name="hat",
        func=lambda x: np.maximum(1 - np.abs(x), 0.0),
        transform=lambda u: np.sinc(u) ** 2 + 0j,
        nonnegative_transform=True,
        exact_l1=1.0,
        half_support=1.0,
        smoother=lambda x, s: _smooth_piecewise_linear(x, s, [(-1.0, 0.0, 1.0, 1.0), (0.0, 1.0, 1.0, -1.0)]),
    )


def _cosine_transform(u):
    denominator = 1 - 4 * pi ** 2 * u ** 2
    singular = np.abs(denominator) < 1e-9
    # Removable singularity at |u| = 1/(2 pi), where the limit is pi/2
    safe = np.where(singular, 1.0, denominator)
    return np.where(singular, pi / 2, 2 * np.cos(pi ** 2 * u) / safe) + 0j


def cosine_factor() -> Factor:
    return Factor(
        name="cosine",
        func=lambda x: np.where(np.abs(x) <= pi / 2, np.cos(x), 0.0),
        transform=_cosine_transform,
        half_support=pi / 2,
    )


def box_factor() -> Factor:
    return Factor(
        name="box1",
        func=lambda x: (np.abs(x) <= 1).astype(float),
        transform=lambda u: 2 * np.sinc(2 * u) + 0j,
        integrable=False,
        half_support=1.0,
        jumps=(-1.0, 1.0),
        smoother=lambda x, s: _smooth_piecewise_linear(x, s, [(-1.0, 1.0, 1.0, 0.0)]),
        tail_constant=1 / pi,
        central_mass_bound=4.0,
    )


def truncated_sign_factor(M1: float) -> Factor:
    """sign(x) 1{|x| <= 2 M1}, which agrees with sign(x) on differences of points of [-M1, M1]"""
    if M1 <= 0:
        raise ValueError(f"Truncation level M1 must be positive, found {M1}")
    return Factor(
        name=f"sign[{M1:g}]",
        func=lambda x: np.sign(x) * (np.abs(x) <= 2 * M1),
        # i (cos(4 pi u M1) - 1) / (pi u) written without the removable singularity at 0
        transform=lambda u: -1j * 8 * pi * M1 ** 2 * u * np.sinc(2 * M1 * u) ** 2,
        parity=Parity.ODD.value,
        integrable=False,
        half_support=2 * M1,
        jumps=(-2 * M1, 0.0, 2 * M1),
        smoother=lambda x, s: _smooth_piecewise_linear(x, s, [(-2 * M1, 0.0, -1.0, 0.0), (0.0, 2 * M1, 1.0, 0.0)]),
        tail_constant=2 / pi,
        central_mass_bound=8 + 4 / pi * math.log(M1) if M1 > 1 else 8.0,
    )


def fourier_oracle(factor: Factor, u) -> np.ndarray:
    """Numerical Fourier transform of a factor by oscillatory quadrature, used to validate closed forms"""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    upper = factor.half_support if factor.half_support is not None else np.inf
    values = np.zeros(u.shape, dtype=complex)
    scalar = lambda x: float(factor.func(np.array([x]))[0])
    for k, freq in enumerate(u):
        omega = 2 * pi * abs(freq)
        if factor.parity == Parity.EVEN.value:
            if omega == 0:
                integral, _ = quad(scalar, 0, upper, limit=400)
            else:
                integral, _ = quad(scalar, 0, upper, weight="cos", wvar=omega, limit=400, epsabs=1e-12)
            values[k] = 2 * integral
        else:
            if omega == 0:
                continue
            integral, _ = quad(scalar, 0, upper, weight="sin", wvar=omega, limit=400, epsabs=1e-12)
            values[k] = -2j * integral * np.sign(freq)
    return values


### Spectral densities

@dataclass(frozen=True)
class SpectralDensity:
    """Fourier transform of a kernel together with the L1 masses and samplers of its four sign parts"""
    dim: int  # dimension of the frequency space
    value: Callable[[np.ndarray], np.ndarray]  # (N, dim) -> complex (N,)
    real_pos_mass: float
    real_neg_mass: float
    imag_pos_mass: float
    imag_neg_mass: float
    l1_norm: float
    sampler: Optional[Callable[[np.random.Generator, str, int], np.ndarray]] = None  # (rng, part, size) -> (size, dim)
    shift_invariant: bool = True  # transform of a profile f0 on R^d, lifted to (u, -u) for f(x, y) = f0(x - y)

    def __post_init__(self):
        for mass in self.masses.values():
            if mass < 0:
                raise ValueError(f"Spectral masses must be non-negative, found {self.masses}")

    @property
    def masses(self) -> Dict[str, float]:
        return {
            SpectralParts.REAL_POS.value: self.real_pos_mass,
            SpectralParts.REAL_NEG.value: self.real_neg_mass,
            SpectralParts.IMAG_POS.value: self.imag_pos_mass,
            SpectralParts.IMAG_NEG.value: self.imag_neg_mass,
        }

    @property
    def total_mass(self) -> float:
        return sum(self.masses.values())

    @property
    def sampleable(self) -> bool:
        return self.sampler is not None and math.isfinite(self.l1_norm)

    def sample(self, rng: np.random.Generator, part: str, size: int) -> np.ndarray:
        """Draws frequencies distributed as the normalized sign part"""
        if not self.sampleable:
            raise UnsupportedKernelError("This spectral density has no sampler for its sign parts")
        if part not in self.masses:
            raise ValueError(f"Unknown spectral part {part}, accepted parts are {list(self.masses)}")
        if self.masses[part] <= 0:
            raise ValueError(f"Spectral part {part} has zero mass and cannot be sampled")
        return self.sampler(rng, part, size)


def product_spectral_density(factors: Sequence[Factor]) -> SpectralDensity:
    """Transform of f0(x) = prod_l h_l(x_l) with sign-part masses derived from the per-factor masses

    Each factor transform is real (even factor) or purely imaginary (odd factor), so the
    product equals i^k S with S real and k the number of odd factors.
    """
    factors = tuple(factors)
    n_odd = sum(f.parity == Parity.ODD.value for f in factors)
    real = n_odd % 2 == 0
    phase = -1.0 if (n_odd // 2) % 2 else 1.0

    def value(u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.ones(u.shape[0], dtype=complex)
        for axis, factor in enumerate(factors):
            out *= factor.transform(u[:, axis])
        return out

    if all(f.integrable for f in factors):
        l1 = math.prod(f.l1_norm for f in factors)
        signed_pos_minus_neg = math.prod(p - n for p, n in (f.masses for f in factors))
        positive = 0.5 * (l1 + signed_pos_minus_neg)
        negative = 0.5 * (l1 - signed_pos_minus_neg)
        if phase < 0:
            positive, negative = negative, positive
        # Guard against tiny negative round-off of the combinatorial masses
        positive, negative = max(positive, 0.0), max(negative, 0.0)
    else:
        l1 = positive = negative = math.inf

    def sampler(rng, part, size):
        target = 1.0 if part in (SpectralParts.REAL_POS.value, SpectralParts.IMAG_POS.value) else -1.0
        accepted = []
        remaining = size
        fraction = (positive if target > 0 else negative) / l1
        while remaining > 0:
            batch = int(math.ceil(1.2 * remaining / fraction)) + 16
            u = np.column_stack([f.sample_abs(rng, batch) for f in factors])
            sign = phase * np.prod(np.column_stack([np.sign(f.signed(u[:, k])) for k, f in enumerate(factors)]), axis=1)
            u = u[sign == target]
            accepted.append(u[:remaining])
            remaining -= len(accepted[-1])
        return np.concatenate(accepted)

    return SpectralDensity(
        dim=len(factors),
        value=value,
        real_pos_mass=positive if real else 0.0,
        real_neg_mass=negative if real else 0.0,
        imag_pos_mass=0.0 if real else positive,
        imag_neg_mass=0.0 if real else negative,
        l1_norm=l1,
        sampler=sampler if math.isfinite(l1) else None,
    )


### Kernels

@dataclass(frozen=True)
class KernelSpec:
    """Kernel of order m on (R^d)^m

    func is vectorized: it receives m arrays of shape (N, d) and returns an array of shape (N,).
    For product-form shift-invariant kernels, factors hold the univariate factors of the profile
    that coincides with the kernel on its approximation domain (truncated where needed).
    """
    name: str
    order: int
    dim: int
    func: Callable[..., np.ndarray]
    tags: frozenset = frozenset()
    spectral: Optional[SpectralDensity] = None
    jump_points: Optional[Tuple[Tuple[float, ...], ...]] = None  # per coordinate
    sup_bound: Optional[float] = None
    factors: Optional[Tuple[Factor, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))
        if self.order < 1:
            raise ValueError(f"A KernelSpec must have positive order, found {self.order}")
        if self.dim < 1:
            raise ValueError(f"A KernelSpec must have positive dimension, found {self.dim}")
        for tag in self.tags:
            if tag not in [e.value for e in KernelTags]:
                raise ValueError(f"A KernelSpec was defined with tag {tag}, which is not an accepted tag ({[e.value for e in KernelTags]})")
        if self.has(KernelTags.SHIFT_INVARIANT) and self.order != 2:
            raise ValueError(f"Shift-invariant kernels must have order 2, found {self.order}")
        if self.factors is not None and len(self.factors) != self.dim:
            raise ValueError(f"A product-form kernel needs one factor per coordinate, found {len(self.factors)} for dimension {self.dim}")
        if self.jump_points is not None and len(self.jump_points) != self.dim:
            raise ValueError(f"Jump points must be given per coordinate, found {len(self.jump_points)} for dimension {self.dim}")

    def has(self, tag: KernelTags) -> bool:
        return tag.value in self.tags

    def __call__(self, *points) -> float:
        return eval_kernel(self, *points)

    def profile(self, diff: np.ndarray) -> np.ndarray:
        """Evaluates f0 at differences of shape (N, d) for product-form shift-invariant kernels"""
        if self.factors is None:
            raise UnsupportedKernelError(f"Kernel {self.name} has no product-form profile")
        diff = np.atleast_2d(diff)
        return np.prod(np.column_stack([f(diff[:, k]) for k, f in enumerate(self.factors)]), axis=1)


def eval_kernel(spec: KernelSpec, *points) -> float:
    """Evaluates the kernel at a single tuple of m points"""
    if len(points) != spec.order:
        raise ValueError(f"Kernel {spec.name} has order {spec.order} but received {len(points)} points")
    args = []
    for point in points:
        point = np.atleast_1d(np.asarray(point, dtype=float))
        if point.shape != (spec.dim,):
            raise ValueError(f"Kernel {spec.name} expects points of dimension {spec.dim}, found shape {point.shape}")
        args.append(point[None, :])
    return float(spec.func(*args)[0])


def symmetrize(spec: KernelSpec) -> KernelSpec:
    """Average of the kernel over all permutations of its arguments"""
    perms = list(permutations(range(spec.order)))
    base = spec.func

    def func(*args):
        return sum(base(*(args[k] for k in perm)) for perm in perms) / len(perms)

    # Spectral data only survive when the input was symmetric already
    already = spec.has(KernelTags.SYMMETRIC)
    return KernelSpec(
        name=f"{spec.name}_sym",
        order=spec.order,
        dim=spec.dim,
        func=func,
        tags=spec.tags | {KernelTags.SYMMETRIC.value},
        spectral=spec.spectral if already else None,
        jump_points=spec.jump_points,
        sup_bound=spec.sup_bound,
        factors=spec.factors if already else None,
    )


def spectral_density(spec: KernelSpec, validate: bool = True, rtol: float = 1e-3) -> SpectralDensity:
    """Returns the closed-form transform of a kernel, checked against the quadrature oracle"""
    if spec.spectral is None:
        raise UnsupportedKernelError(f"Kernel {spec.name} has no known Fourier transform")
    if validate and spec.factors is not None:
        frequencies = np.linspace(0.03, 0.6, 10)
        for factor in set(spec.factors):
            closed = factor.transform(frequencies)
            oracle = fourier_oracle(factor, frequencies)
            scale = np.max(np.abs(oracle))
            if np.any(np.abs(closed - oracle) > rtol * np.abs(oracle) + 1e-6 * scale):
                raise ValueError(f"Closed-form transform of factor {factor.name} disagrees with the quadrature oracle")
    return spec.spectral


def gram_min_eigenvalue(spec: KernelSpec, points: np.ndarray) -> float:
    """Smallest eigenvalue of the Gram matrix of an order-2 kernel on the given points"""
    if spec.order != 2:
        raise ValueError(f"Gram matrices need an order-2 kernel, found order {spec.order}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    left = np.repeat(points, n, axis=0)
    right = np.tile(points, (n, 1))
    gram = spec.func(left, right).reshape(n, n)
    return float(np.linalg.eigvalsh(0.5 * (gram + gram.T))[0])


def product_kernel(name, factors, tags=(), func=None, sup_bound=None):
    """Builds f(x, y) = f0(x - y) from univariate factors; func overrides the evaluator off the truncation domain"""
    factors = tuple(factors)

    def product(x, y):
        diff = x - y
        return np.prod(np.column_stack([f(diff[:, k]) for k, f in enumerate(factors)]), axis=1)

    jumps = tuple(f.jumps for f in factors)
    base_tags = {KernelTags.SHIFT_INVARIANT.value, KernelTags.PRODUCT_FORM.value, KernelTags.SYMMETRIC.value}
    if all(f.nonnegative_transform for f in factors):
        base_tags.add(KernelTags.POSITIVE_DEFINITE.value)
    return KernelSpec(
        name=name,
        order=2,
        dim=len(factors),
        func=func if func is not None else product,
        tags=frozenset(base_tags | set(tags)),
        spectral=product_spectral_density(factors),
        jump_points=jumps if any(jumps) else None,
        sup_bound=sup_bound if sup_bound is not None else math.prod(f.sup_bound for f in factors),
        factors=factors,
    )


def gaussian_kernel(d: int = 1) -> KernelSpec:
    """exp(-||x - y||^2 / 2)"""
    return product_kernel("gaussian", [gaussian_factor()] * d)


def laplacian_kernel(d: int = 1) -> KernelSpec:
    """exp(-||x - y||_1)"""
    return product_kernel("laplacian", [laplacian_factor()] * d)


def cauchy_kernel(d: int = 1) -> KernelSpec:
    """prod_l 2 / (1 + (x_l - y_l)^2)"""
    return product_kernel("cauchy", [cauchy_factor()] * d)


def hat_kernel(d: int = 1) -> KernelSpec:
    return product_kernel("hat", [hat_factor()] * d)


def cosine_kernel(d: int = 1) -> KernelSpec:
    return product_kernel("cosine", [cosine_factor()] * d)


def box_kernel(d: int = 1) -> KernelSpec:
    return product_kernel("box1", [box_factor()] * d, tags={KernelTags.PIECEWISE_CONSTANT_FACTORS.value})


def kendall_kernel(M1: float = 5.0) -> KernelSpec:
    """sign(x1 - y1) sign(x2 - y2); its spectral data belong to the version truncated at 2 M1"""
    return product_kernel(
        "kendall",
        [truncated_sign_factor(M1)] * 2,
        tags={KernelTags.PIECEWISE_CONSTANT_FACTORS.value},
        func=lambda x, y: np.sign(x[:, 0] - y[:, 0]) * np.sign(x[:, 1] - y[:, 1]),
        sup_bound=1.0,
    )


def spearman_base_kernel() -> KernelSpec:
    """sign(x1 - y1) sign(x2 - z2), the non-symmetric order-3 kernel behind Spearman's rho"""
    return KernelSpec(
        name="spearman_base",
        order=3,
        dim=2,
        func=lambda x, y, z: np.sign(x[:, 0] - y[:, 0]) * np.sign(x[:, 1] - z[:, 1]),
        tags=frozenset({KernelTags.PIECEWISE_CONSTANT_FACTORS.value}),
        sup_bound=1.0,
    )


def sign_kernel(M1: float = 5.0) -> KernelSpec:
    """sign(x - y) on the line; antisymmetric, its spectral data belong to the version truncated at 2 M1"""
    spec = product_kernel(
        "sign",
        [truncated_sign_factor(M1)],
        tags={KernelTags.PIECEWISE_CONSTANT_FACTORS.value},
        func=lambda x, y: np.sign(x[:, 0] - y[:, 0]),
        sup_bound=1.0,
    )
    return replace(spec, tags=spec.tags - {KernelTags.SYMMETRIC.value})


def spearman_kernel(M1: float = 5.0) -> KernelSpec:
    sign_jumps = truncated_sign_factor(M1).jumps
    return replace(symmetrize(spearman_base_kernel()), name="spearman", jump_points=(sign_jumps, sign_jumps))


def linear_kernel(d: int = 1) -> KernelSpec:
    """x . y"""
    return KernelSpec(
        name="linear",
        order=2,
        dim=d,
        func=lambda x, y: np.sum(x * y, axis=1),
        tags=frozenset({KernelTags.SYMMETRIC.value, KernelTags.POSITIVE_DEFINITE.value}),
    )


KERNEL_BUILDERS: Dict[str, Callable[..., KernelSpec]] = {
    "gaussian": lambda d=1, M1=5.0: gaussian_kernel(d),
    "laplacian": lambda d=1, M1=5.0: laplacian_kernel(d),
    "cauchy": lambda d=1, M1=5.0: cauchy_kernel(d),
    "hat": lambda d=1, M1=5.0: hat_kernel(d),
    "cosine": lambda d=1, M1=5.0: cosine_kernel(d),
    "box1": lambda d=1, M1=5.0: box_kernel(d),
    "kendall": lambda d=2, M1=5.0: kendall_kernel(M1),
    "spearman": lambda d=2, M1=5.0: spearman_kernel(M1),
    "linear": lambda d=1, M1=5.0: linear_kernel(d),
}


def get_kernel(kernel_id: str, d: int = 1, M1: float = 5.0) -> KernelSpec:
    """Catalog kernel by string id"""
    if kernel_id not in KERNEL_BUILDERS:
        raise UnsupportedKernelError(f"Unknown kernel {kernel_id}, accepted kernels are {list(KERNEL_BUILDERS)}")
    if kernel_id in ("kendall", "spearman"):
        return KERNEL_BUILDERS[kernel_id](M1=M1)
    return KERNEL_BUILDERS[kernel_id](d=d)


### Approximation domains

def _coalesce_bands(bands) -> Tuple[Tuple[float, float], ...]:
    segments = segmentlist([segment(lo, hi) for lo, hi in bands if hi > lo]).coalesce()
    return tuple((float(s[0]), float(s[1])) for s in segments)


@dataclass(frozen=True)
class ApproxDomain:
    """Set C of m-tuples: the box [-M, M]^{md} minus open bands around registered jump points

    A tuple is excluded when, for some ordered pair of arguments (i, j) and coordinate l,
    the difference x_il - x_jl falls inside one of the bands of coordinate l. Checking
    every ordered pair makes membership symmetric under argument permutations.
    """
    order: int
    dim: int
    halfwidth: float
    margin: float = 0.0
    jumps: Tuple[Tuple[float, ...], ...] = ()  # per coordinate, empty when there are no jumps
    bands: Tuple[Tuple[Tuple[float, float], ...], ...] = field(default=None)

    def __post_init__(self):
        if self.order < 1 or self.dim < 1:
            raise ValueError(f"An ApproxDomain needs positive order and dimension, found ({self.order}, {self.dim})")
        if self.halfwidth <= 0:
            raise ValueError(f"An ApproxDomain must have positive box halfwidth, found {self.halfwidth}")
        if self.margin < 0:
            raise ValueError(f"An ApproxDomain must have non-negative exclusion margin, found {self.margin}")
        jumps = tuple(tuple(float(y) for y in coord) for coord in self.jumps) if self.jumps else tuple(() for _ in range(self.dim))
        if len(jumps) != self.dim:
            raise ValueError(f"Jump points must be given per coordinate, found {len(jumps)} for dimension {self.dim}")
        object.__setattr__(self, "jumps", jumps)
        if self.bands is None:
            bands = tuple(_coalesce_bands((y - self.margin, y + self.margin) for y in coord) for coord in jumps)
        else:
            bands = tuple(_coalesce_bands(coord) for coord in self.bands)
        object.__setattr__(self, "bands", bands)

    @property
    def has_bands(self) -> bool:
        return any(self.bands)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Vectorized membership for points of shape (N, m, d)"""
        points = np.asarray(points, dtype=float)
        if points.ndim != 3 or points.shape[1:] != (self.order, self.dim):
            raise ValueError(f"Expected points of shape (N, {self.order}, {self.dim}), found {points.shape}")
        inside = np.all(np.abs(points) <= self.halfwidth, axis=(1, 2))
        if not self.has_bands:
            return inside
        for i in range(self.order):
            for j in range(self.order):
                if i == j:
                    continue
                for coord, bands in enumerate(self.bands):
                    diff = points[:, i, coord] - points[:, j, coord]
                    for lo, hi in bands:
                        inside &= ~((diff > lo) & (diff < hi))
        return inside

    def intersect(self, other: "ApproxDomain") -> "ApproxDomain":
        """Intersection of two domains over the same arguments"""
        if (self.order, self.dim) != (other.order, other.dim):
            raise ValueError(f"Cannot intersect domains of shapes ({self.order}, {self.dim}) and ({other.order}, {other.dim})")
        return ApproxDomain(
            order=self.order,
            dim=self.dim,
            halfwidth=min(self.halfwidth, other.halfwidth),
            margin=max(self.margin, other.margin),
            jumps=tuple(tuple(sorted(set(a) | set(b))) for a, b in zip(self.jumps, other.jumps)),
            bands=tuple(a + b for a, b in zip(self.bands, other.bands)),
        )

    def reshaped(self, order: int, dim: int, coords: Optional[Sequence[int]] = None) -> "ApproxDomain":
        """Same box and bands for a different number of arguments, with coordinates mapped onto coords of R^dim"""
        coords = list(range(self.dim)) if coords is None else list(coords)
        if len(coords) != self.dim or max(coords) >= dim:
            raise ValueError(f"Cannot map {self.dim} coordinates onto {coords} of a {dim}-dimensional space")
        jumps = [()] * dim
        bands = [()] * dim
        for source, target in enumerate(coords):
            jumps[target] = self.jumps[source]
            bands[target] = self.bands[source]
        return ApproxDomain(order=order, dim=dim, halfwidth=self.halfwidth, margin=self.margin, jumps=tuple(jumps), bands=tuple(bands))

    def sample(self, rng: np.random.Generator, size: int, max_rounds: int = 50) -> np.ndarray:
        """Uniform draws of in-domain tuples by rejection from the box, shape (<= size, m, d)"""
        accepted = []
        remaining = size
        for _ in range(max_rounds):
            if remaining <= 0:
                break
            draws = rng.uniform(-self.halfwidth, self.halfwidth, size=(2 * remaining + 8, self.order, self.dim))
            draws = draws[self.contains(draws)][:remaining]
            accepted.append(draws)
            remaining -= len(draws)
        if not accepted:
            return np.empty((0, self.order, self.dim))
        return np.concatenate(accepted)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "dim": self.dim,
            "halfwidth": self.halfwidth,
            "margin": self.margin,
            "jumps": [list(coord) for coord in self.jumps],
            "bands": [[list(band) for band in coord] for coord in self.bands],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "ApproxDomain":
        return cls(
            order=document["order"],
            dim=document["dim"],
            halfwidth=document["halfwidth"],
            margin=document["margin"],
            jumps=tuple(tuple(coord) for coord in document["jumps"]),
            bands=tuple(tuple(tuple(band) for band in coord) for coord in document["bands"]),
        )


def in_domain(dom: ApproxDomain, *args) -> bool:
    """Membership of a single tuple of m points"""
    if len(args) != dom.order:
        raise ValueError(f"Domain has order {dom.order} but received {len(args)} points")
    point = np.stack([np.atleast_1d(np.asarray(a, dtype=float)) for a in args])
    return bool(dom.contains(point[None])[0])


def kernel_domain(spec: KernelSpec, M: float, margin: float = 0.0) -> ApproxDomain:
    """Default approximation domain of a kernel: box of halfwidth M minus bands around its jump points"""
    jumps = spec.jump_points if spec.jump_points is not None else ()
    return ApproxDomain(order=spec.order, dim=spec.dim, halfwidth=M, margin=margin if jumps else 0.0, jumps=jumps)


### Catalog

@dataclass(frozen=True)
class CatalogEntry:
    """Row of the kernel catalog: kernel, domain template and expansion constants (F, B, mu_a)"""
    kernel_id: str
    spec: KernelSpec
    domain: ApproxDomain
    F: float
    B: float
    mu: Optional[float]  # None when mu_a depends on the data law
    mu_label: str
    regime: str  # how F was obtained


def builtin_catalog(d: int = 1, M: float = 3.0, M1: float = 5.0, M2: float = 0.1, t: float = 0.1) -> List[CatalogEntry]:
    """Catalog of the standard kernels with their expansion constants

    Parameter-free rows (Gaussian, Laplacian, Cauchy, Hat, Cosine) do not depend on (M1, M2, t);
    the box, Kendall and Spearman rows evaluate their F at the given truncation, margin and bias.
    """
    from mixvstat.expansion import budget_mul, choose_h_discontinuous, expansion_F

    entries = []
    for kernel_id, spec in [("gaussian", gaussian_kernel(d)), ("laplacian", laplacian_kernel(d)),
                            ("cauchy", cauchy_kernel(d)), ("hat", hat_kernel())]:
        # Positive definite profiles: F = 2 f0(0)
        F = 2 * float(spec.profile(np.zeros((1, spec.dim)))[0])
        entries.append(CatalogEntry(kernel_id, spec, kernel_domain(spec, M), F, 1.0, 1.0, "1", "positive_definite"))

    cosine = cosine_kernel()
    entries.append(CatalogEntry("cosine", cosine, kernel_domain(cosine, M), expansion_F("B2", m=2, d=1, eps=1.0, L_F=2.0, shift_invariant=True),
                                1.0, 1.0, "1", "lipschitz"))

    box = box_kernel()
    factor = box.factors[0]
    h = choose_h_discontinuous(M2, 1, 1.0, t)
    entries.append(CatalogEntry("box1", box, kernel_domain(box, M1, M2),
                                expansion_F("B4", central_masses=[factor.central_mass_bound], tail_constants=[factor.tail_constant], h=h),
                                1.0, 1.0, "1", "discontinuous"))

    kendall = kendall_kernel(M1)
    factor = kendall.factors[0]
    h = choose_h_discontinuous(M2, 2, 1.0, t)
    entries.append(CatalogEntry("kendall", kendall, kernel_domain(kendall, M1, M2),
                                expansion_F("B4", central_masses=[factor.central_mass_bound] * 2, tail_constants=[factor.tail_constant] * 2, h=h),
                                1.0, 1.0, "1", "discontinuous"))

    spearman = spearman_kernel(M1)
    factor = truncated_sign_factor(M1)
    part_F = []
    for t_part in budget_mul(t, [1.0, 1.0]):
        h = choose_h_discontinuous(M2, 1, 1.0, t_part)
        part_F.append(expansion_F("B4", central_masses=[factor.central_mass_bound], tail_constants=[factor.tail_constant], h=h))
    entries.append(CatalogEntry("spearman", spearman, kernel_domain(spearman, M1, M2), math.prod(part_F), 1.0, 1.0, "1", "discontinuous_product"))

    linear = linear_kernel(d)
    entries.append(CatalogEntry("linear", linear, kernel_domain(linear, M), float(d), M, None, "||X_1||_a", "exact"))
    return entries
