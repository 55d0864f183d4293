"""Closed-form concentration and calibration formulas for V-statistics of mixing sequences

The absolute constants C1 and C2 of the tail bounds are left free by the theory; they are
inputs here, with defaults 1, and every report carries the values used.
"""
from dataclasses import dataclass
from enum import Enum
import logging
import math
import numpy as np
from scipy.special import ndtr
from typing import List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)


class MixingKinds(Enum):
    ALPHA = "alpha"
    TAU = "tau"


class DiscontinuousVariants(Enum):
    """Variant a shifts x by (|f0(0)| + F) / n, variant b needs M2 below every |jump point|"""
    A = "a"
    B = "b"


@dataclass(frozen=True)
class MixingModel:
    """Geometric mixing rate gamma1 exp(-gamma2 k), moment slack delta and, for tau-mixing, the Lipschitz constant"""
    kind: str
    gamma1: float
    gamma2: float
    delta: float = 1.0
    lip_L: Optional[float] = None

    def __post_init__(self):
        if self.kind not in [e.value for e in MixingKinds]:
            raise ValueError(f"A MixingModel was defined with kind {self.kind}, which is not an accepted kind ({[e.value for e in MixingKinds]})")
        if min(self.gamma1, self.gamma2, self.delta) <= 0:
            raise ValueError(f"gamma1, gamma2 and delta must be positive, found ({self.gamma1}, {self.gamma2}, {self.delta})")
        if (self.kind == MixingKinds.TAU.value) != (self.lip_L is not None):
            raise ValueError(f"lip_L must be given exactly for tau-mixing models, found kind={self.kind}, lip_L={self.lip_L}")
        if self.lip_L is not None and self.lip_L <= 0:
            raise ValueError(f"lip_L must be positive, found {self.lip_L}")

    def sigma_sq(self, mu_2_delta: float) -> float:
        if self.kind == MixingKinds.ALPHA.value:
            return sigma_sq_alpha(self.gamma1, self.gamma2, self.delta, mu_2_delta)
        return sigma_sq_tau(self.gamma1, self.gamma2, self.delta, self.lip_L, mu_2_delta)


@dataclass(frozen=True)
class TailBoundInputs:
    F: float
    B: float
    mu1: float
    mu_2_delta: float
    sigma2: float
    n: int
    m: int
    r: int = 1
    C1: float = 1.0
    C2: float = 1.0
    t: float = 0.0
    t_prime: Optional[float] = None
    residual: Optional[float] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"Tail bounds need n >= 2, found {self.n}")
        if not 1 <= self.r <= self.m:
            raise ValueError(f"Degeneracy r must lie in [1, m={self.m}], found {self.r}")
        if min(self.F, self.B, self.mu1, self.mu_2_delta, self.C1, self.C2) < 0 or self.sigma2 < 0:
            raise ValueError(f"Constants must be non-negative, found {self}")


@dataclass(frozen=True)
class TailBound:
    """Upper bound on P(|V_n - theta| >= threshold); values of 1 or more are vacuous"""
    value: float
    threshold: float
    vacuous: bool
    C1: float
    C2: float


def sigma_sq_alpha(gamma1: float, gamma2: float, delta: float, mu_2_delta: float) -> float:
    """64 gamma1^{delta/(2+delta)} / (1 - exp(-gamma2 delta/(2+delta))) mu_{2+delta}^2"""
    if min(gamma1, gamma2, delta, mu_2_delta) <= 0:
        raise ValueError(f"All inputs must be positive, found ({gamma1}, {gamma2}, {delta}, {mu_2_delta})")
    exponent = delta / (2 + delta)
    return 64 * gamma1 ** exponent / -math.expm1(-gamma2 * exponent) * mu_2_delta ** 2


def sigma_sq_tau(gamma1: float, gamma2: float, delta: float, lip_L: float, mu_2_delta: float) -> float:
    """12 (gamma1 L)^{delta/(1+delta)} / (1 - exp(-gamma2 delta/(1+delta))) mu_{2+delta}^{(2+delta)/(1+delta)}

    Returns +inf when the denominator underflows to 0 (delta -> 0).
    """
    if min(gamma1, gamma2, lip_L, mu_2_delta) <= 0 or delta < 0:
        raise ValueError(f"Inputs must be positive, found ({gamma1}, {gamma2}, {delta}, {lip_L}, {mu_2_delta})")
    exponent = delta / (1 + delta)
    denominator = -math.expm1(-gamma2 * exponent)
    if denominator == 0:
        return math.inf
    return 12 * (gamma1 * lip_L) ** exponent / denominator * mu_2_delta ** ((2 + delta) / (1 + delta))


def bern_seq(F: float, B: float, mu1: float, sigma2: float, n: int, m: int) -> Tuple[List[float], List[float]]:
    """Returns a tuple with:
        - A_p = mu1^{2(m-p)} F^2 (sigma2 + B^2 (log n)^4 / n)^p for p = 1..m
        - M_p = mu1^{m-p} F B^p (log n)^{2p} for p = 1..m
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, found {n}")
    log_n = math.log(n)
    A = [mu1 ** (2 * (m - p)) * F ** 2 * (sigma2 + B ** 2 * log_n ** 4 / n) ** p for p in range(1, m + 1)]
    M = [mu1 ** (m - p) * F * B ** p * log_n ** (2 * p) for p in range(1, m + 1)]
    return A, M


def _exponential_sum(inputs: TailBoundInputs, x: float) -> float:
    A, M = bern_seq(inputs.F, inputs.B, inputs.mu1, inputs.sigma2, inputs.n, inputs.m)
    terms = []
    for p in range(inputs.r, inputs.m + 1):
        denominator = A[p - 1] ** (1 / p) + x ** (1 / p) * M[p - 1] ** (1 / p)
        terms.append(math.exp(-inputs.C2 * inputs.n * x ** (2 / p) / denominator) if denominator > 0 else 0.0)
    return math.fsum(terms)


def _bound(value: float, threshold: float, inputs: TailBoundInputs) -> TailBound:
    vacuous = value >= 1
    if vacuous:
        logger.debug(f"Tail bound {value:.4g} at threshold {threshold:.4g} is vacuous")
    return TailBound(value=value, threshold=threshold, vacuous=vacuous, C1=inputs.C1, C2=inputs.C2)


def tail_bound_degenerate(inputs: TailBoundInputs, x: float) -> TailBound:
    """Bound for compactly supported data: 6 sum_{p=r}^m exp(-C2 n x^{2/p} / (A_p^{1/p} + x^{1/p} M_p^{1/p})) at x + C1 t"""
    if x <= 0:
        raise ValueError(f"x must be positive, found {x}")
    return _bound(6 * _exponential_sum(inputs, x), x + inputs.C1 * inputs.t, inputs)


def tail_bound_general(inputs: TailBoundInputs, x: float) -> TailBound:
    """Bound for arbitrary support: 2 sum of the exponential terms plus the residual probability, at x + C1 t'"""
    if x <= 0:
        raise ValueError(f"x must be positive, found {x}")
    if inputs.t_prime is None or inputs.residual is None:
        raise ValueError("The general tail bound needs t_prime and residual")
    if inputs.residual >= 1:
        logger.warning(f"Residual probability {inputs.residual:.4g} makes the general tail bound vacuous")
    return _bound(2 * _exponential_sum(inputs, x) + inputs.residual, x + inputs.C1 * inputs.t_prime, inputs)


def tail_bound_discontinuous(inputs: TailBoundInputs, x: float, f0_at_0: float, J_total: float, M2: float, D: float,
                             tail_at_M1: Sequence[float], variant: str = DiscontinuousVariants.A.value,
                             jump_points: Optional[Sequence[float]] = None) -> TailBound:
    """Bound for kernels with jumps: exponential terms plus n^2 J M2 D plus n sum_l P(|X_l| >= M1), at x + C1 t'

    Variant a evaluates the exponential terms at y = x - (|f0(0)| + F) / n; variant b at x,
    which is only valid when M2 is at most the smallest |jump point|.
    """
    if variant not in [e.value for e in DiscontinuousVariants]:
        raise ValueError(f"Unknown variant {variant}, accepted variants are {[e.value for e in DiscontinuousVariants]}")
    if min(J_total, M2, D) < 0 or any(p < 0 for p in tail_at_M1):
        raise ValueError(f"J_total, M2, D and tail probabilities must be non-negative, found ({J_total}, {M2}, {D}, {list(tail_at_M1)})")
    if variant == DiscontinuousVariants.A.value:
        shift = (abs(f0_at_0) + inputs.F) / inputs.n
        if x <= shift:
            raise ValueError(f"Variant a needs x > (|f0(0)| + F) / n = {shift}, found {x}")
        y = x - shift
    else:
        if x <= 0:
            raise ValueError(f"x must be positive, found {x}")
        if jump_points is not None and (len(jump_points) == 0 or M2 > min(abs(p) for p in jump_points)):
            raise ValueError(f"Variant b needs 0 < M2 <= min |jump point|, found M2={M2} with jumps {list(jump_points)}")
        y = x
    t_prime = inputs.t_prime if inputs.t_prime is not None else inputs.t
    value = 2 * _exponential_sum(inputs, y) + inputs.n ** 2 * J_total * M2 * D + inputs.n * math.fsum(tail_at_M1)
    return _bound(value, x + inputs.C1 * t_prime, inputs)


def empirical_tail(deviations: np.ndarray, thresholds: Sequence[float]) -> np.ndarray:
    """Fraction of |V_n - theta| values at or above each threshold"""
    deviations = np.abs(np.asarray(deviations, dtype=float))
    return np.array([float(np.mean(deviations >= level)) for level in thresholds])


@dataclass(frozen=True)
class MDPDiagnostics:
    """Finite-n proxies of the two o(.) conditions of the moderate deviation result"""
    ratio1: float
    ratio2: float


def mdp_condition_check(F: float, B: float, mu1: float, sigma2: float, n: float, m: int) -> MDPDiagnostics:
    """ratio1 = mu1^{m-2} F sigma2 / (n^{1/2} (log n)^{-3}), ratio2 = mu1^{m-2} B^2 F / (n^{3/2} (log n)^{-8})"""
    if n < 3:
        raise ValueError(f"n must be at least 3, found {n}")
    log_n = math.log(n)
    leading = mu1 ** (m - 2) * F
    return MDPDiagnostics(
        ratio1=leading * sigma2 * log_n ** 3 / math.sqrt(n),
        ratio2=leading * B ** 2 * log_n ** 8 / n ** 1.5,
    )


def gumbel_quantile(alpha: float) -> float:
    """q_alpha = -log(pi) - 2 log log (1 - alpha)^{-1}, the 1 - alpha quantile of the limit of S_n^2 - 2 log p + log log p"""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), found {alpha}")
    return -math.log(math.pi) - 2 * math.log(-math.log1p(-alpha))


def gumbel_cdf(y: float) -> float:
    """exp(-pi^{-1/2} exp(-y/2))"""
    return math.exp(-math.exp(-y / 2) / math.sqrt(math.pi))


def normal_sf(x):
    """1 - Phi(x), computed without cancellation"""
    return ndtr(-np.asarray(x, dtype=float)) if np.ndim(x) else float(ndtr(-float(x)))
