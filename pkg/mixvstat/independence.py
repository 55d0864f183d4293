"""High-dimensional multiple independence test built on per-pair Kendall U-statistics

Pair l is standardized as u~ = sqrt(n) (U_l - theta_l) / (2 sigma_l) and the test rejects
when S_n^2 - 2 log p + log log p >= q_alpha with S_n = max_l |u~_l|.
"""
from dataclasses import dataclass, field
from enum import Enum
import logging
import math
import numpy as np
from scipy.stats import binomtest, norm
from typing import Callable, List, Optional, Sequence, Tuple, Union

from mixvstat.bounds import gumbel_quantile, normal_sf
from mixvstat.errors import ConfigError, ResolutionError
from mixvstat.processes import AR1Config, InnovationModes, ProcessSample, path_sampler, simulate_bivariate_pairs
from mixvstat.replication import derive_seed, ordered_map
from mixvstat.vstat import kendall_tau_fast

logger = logging.getLogger(__name__)

# Series truncation: stop once a summand is below SERIES_TOL or at MAX_LAG
SERIES_TOL = 1e-12
MAX_LAG = 10_000
# Relative standard error above which a Monte Carlo sigma^2 is not resolved
MAX_RELATIVE_SE = 0.05


class Sigma2Methods(Enum):
    CLOSED_FORM_GAUSSIAN = "closed_form_gaussian"
    MONTE_CARLO = "monte_carlo"
    PLUGIN = "plugin"
    GIVEN = "given"


@dataclass(frozen=True)
class Sigma2Estimate:
    """Long-run variance sigma^2 of the Kendall projection; approximate for data-driven estimates"""
    value: float
    se: float
    method: str
    approximate: bool = False


def _orthant_term(rho: float, lag: int) -> float:
    """4 E{F(X_1) F(X_{1+k})} - 1 for a standardized Gaussian AR(1) with coefficient rho"""
    return 2 / math.pi * math.asin(rho ** lag / 2)


def _check_rho(rho1: float, rho2: float):
    if not (abs(rho1) < 1 and abs(rho2) < 1):
        raise ValueError(f"AR coefficients must satisfy |rho| < 1, found ({rho1}, {rho2})")


def sigma2_kendall_closed_form(rho1: float, rho2: float, lag_cap: int = MAX_LAG) -> float:
    """1/9 + 2 sum_k (4/pi^2) arcsin(rho1^k / 2) arcsin(rho2^k / 2)

    Uses P(Z_1 <= X_1, Z_2 <= X_{1+k}) = 1/4 + arcsin(rho^k / 2) / (2 pi) for independent
    copies Z of the stationary Gaussian marginal.
    """
    _check_rho(rho1, rho2)
    total = []
    for lag in range(1, lag_cap + 1):
        term = _orthant_term(rho1, lag) * _orthant_term(rho2, lag)
        if abs(term) < SERIES_TOL:
            break
        total.append(term)
    return 1 / 9 + 2 * math.fsum(total)


def _lag_products(values: np.ndarray, lags: int) -> np.ndarray:
    n = values.shape[0]
    return np.array([np.dot(values[:n - k], values[k:]) / (n - k) for k in range(1, lags + 1)])


def sigma2_kendall_monte_carlo(rho1: float, rho2: float, budget: int, rng: np.random.Generator, lag_cap: int = MAX_LAG,
                               n_batches: int = 20) -> Sigma2Estimate:
    """Monte Carlo sigma^2 from long Gaussian AR(1) paths, with the exact stationary CDF applied to each path"""
    _check_rho(rho1, rho2)
    rho_max = max(abs(rho1), abs(rho2))
    lags = 1 if rho_max == 0 else min(lag_cap, max(1, int(math.ceil(math.log(SERIES_TOL) / math.log(rho_max)))))
    length = budget // n_batches
    if length <= 10 * lags:
        raise ValueError(f"Budget {budget} is too small for {lags} lags over {n_batches} batches")
    config = AR1Config(coeffs=(rho1, rho2))
    estimates = []
    for _ in range(n_batches):
        path = path_sampler(config, 2)(rng, length) / config.stationary_sd(2)
        centered = 2 * norm.cdf(path) - 1
        products = _lag_products(centered[:, 0], lags) * _lag_products(centered[:, 1], lags)
        estimates.append(1 / 9 + 2 * math.fsum(products))
    estimates = np.array(estimates)
    value = float(estimates.mean())
    se = float(estimates.std(ddof=1) / math.sqrt(n_batches))
    if se > MAX_RELATIVE_SE * abs(value):
        raise ResolutionError(f"Monte Carlo sigma^2 = {value:.4g} has standard error {se:.3g}, above {MAX_RELATIVE_SE:.0%} of the value")
    return Sigma2Estimate(value=value, se=se, method=Sigma2Methods.MONTE_CARLO.value)


def sigma2_kendall_ar1(rho1: float, rho2: float, method: str = Sigma2Methods.CLOSED_FORM_GAUSSIAN.value, lag_cap: int = MAX_LAG,
                       budget: int = 1_000_000, rng: Optional[np.random.Generator] = None) -> Sigma2Estimate:
    """sigma^2 of the Kendall statistic of an independent pair of Gaussian AR(1) coordinates"""
    if lag_cap < 1:
        raise ValueError(f"Lag cap must be at least 1, found {lag_cap}")
    if method == Sigma2Methods.CLOSED_FORM_GAUSSIAN.value:
        return Sigma2Estimate(value=sigma2_kendall_closed_form(rho1, rho2, lag_cap), se=0.0, method=method)
    if method == Sigma2Methods.MONTE_CARLO.value:
        if rng is None:
            raise ValueError("The Monte Carlo method needs a random generator")
        return sigma2_kendall_monte_carlo(rho1, rho2, budget, rng, lag_cap)
    raise ValueError(f"Unknown method {method}, accepted methods are {[Sigma2Methods.CLOSED_FORM_GAUSSIAN.value, Sigma2Methods.MONTE_CARLO.value]}")


def _empirical_cdf(values: np.ndarray) -> np.ndarray:
    ordered = np.sort(values)
    return np.searchsorted(ordered, values, side="right") / values.shape[0]


def sigma2_plugin(sample: np.ndarray, lag_cap: int = 20) -> Sigma2Estimate:
    """Data-mode sigma^2: empirical CDFs and truncated lag products of each coordinate"""
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 2 or sample.shape[1] != 2:
        raise ValueError(f"Plug-in sigma^2 needs a bivariate sample, found shape {sample.shape}")
    if not 1 <= lag_cap < sample.shape[0] - 1:
        raise ValueError(f"Lag cap must lie in [1, n - 2], found {lag_cap} for n = {sample.shape[0]}")
    centered = [2 * _empirical_cdf(sample[:, j]) - 1 for j in range(2)]
    products = _lag_products(centered[0], lag_cap) * _lag_products(centered[1], lag_cap)
    value = 1 / 9 + 2 * math.fsum(products)
    if value <= 0:
        logger.warning(f"Plug-in sigma^2 {value:.3g} is not positive, clamped to its leading term 1/9")
        value = 1 / 9
    return Sigma2Estimate(value=value, se=math.nan, method=Sigma2Methods.PLUGIN.value, approximate=True)


def kendall_projection(cdf1: Callable[[np.ndarray], np.ndarray], cdf2: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """h_1(x) = (2 F_1(x_1) - 1)(2 F_2(x_2) - 1), the first Hoeffding projection of the Kendall kernel under independence"""
    def projection(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (2 * cdf1(x[:, 0]) - 1) * (2 * cdf2(x[:, 1]) - 1)

    return projection


### Test statistic

@dataclass(frozen=True)
class PairStat:
    pair_id: int
    n: int
    u_stat: float
    theta: float
    sigma2: float
    u_tilde: float
    sigma2_method: str = Sigma2Methods.GIVEN.value

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"Pair {self.pair_id} needs sigma2 > 0, found {self.sigma2}")
        if abs(self.u_tilde - standardize(self.u_stat, self.theta, self.sigma2, self.n)) > 1e-12 * max(1.0, abs(self.u_tilde)):
            raise ValueError(f"Pair {self.pair_id} has inconsistent u_tilde {self.u_tilde}")


def standardize(u_stat: float, theta: float, sigma2: float, n: int) -> float:
    return math.sqrt(n) * (u_stat - theta) / (2 * math.sqrt(sigma2))


@dataclass(frozen=True)
class TestResult:
    S_n: float
    p_count: int
    alpha: float
    q_alpha: float
    statistic: float
    reject: bool
    per_pair: List[PairStat] = field(default_factory=list)

    def __post_init__(self):
        if self.reject != (self.statistic >= self.q_alpha):
            raise ValueError(f"Inconsistent decision: reject={self.reject} with statistic {self.statistic} and threshold {self.q_alpha}")


def _as_array(sample: Union[ProcessSample, np.ndarray]) -> np.ndarray:
    return sample.data if isinstance(sample, ProcessSample) else np.asarray(sample, dtype=float)


def pair_statistics(samples: Sequence[Union[ProcessSample, np.ndarray]], sigma2: Union[float, Sequence[float]],
                    theta: Union[float, Sequence[float]] = 0.0, sigma2_method: str = Sigma2Methods.GIVEN.value,
                    threads: int = 1) -> List[PairStat]:
    """Kendall U-statistic and its standardization for every pair"""
    arrays = [_as_array(s) for s in samples]
    if not arrays:
        raise ValueError("At least one pair is required")
    sizes = {a.shape[0] for a in arrays}
    if len(sizes) != 1:
        raise ValueError(f"All pairs must have the same sample size, found {sorted(sizes)}")
    n = sizes.pop()
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (len(arrays),))
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (len(arrays),))
    if np.any(sigma2 <= 0):
        raise ValueError(f"sigma2 must be positive for every pair, found {sigma2.min()}")
    u_stats = ordered_map(kendall_tau_fast, arrays, threads=threads)
    return [
        PairStat(pair_id=k, n=n, u_stat=u, theta=float(theta[k]), sigma2=float(sigma2[k]),
                 u_tilde=standardize(u, float(theta[k]), float(sigma2[k]), n), sigma2_method=sigma2_method)
        for k, u in enumerate(u_stats)
    ]


def max_test(pair_stats: Sequence[PairStat], alpha: float = 0.05) -> TestResult:
    """Gumbel-calibrated maximum test over p >= 2 pairs"""
    p = len(pair_stats)
    if p < 2:
        raise ValueError(f"The maximum test needs at least 2 pairs, found {p}")
    q_alpha = gumbel_quantile(alpha)
    S_n = max(abs(s.u_tilde) for s in pair_stats)
    statistic = S_n ** 2 - 2 * math.log(p) + math.log(math.log(p))
    return TestResult(S_n=S_n, p_count=p, alpha=alpha, q_alpha=q_alpha, statistic=statistic,
                      reject=statistic >= q_alpha, per_pair=list(pair_stats))


### Monte Carlo studies

@dataclass(frozen=True)
class MDPProbeRow:
    x: float
    empirical_tail: float
    normal_tail: float
    ratio: float
    se: float  # standard error of the empirical tail


def mdp_ratio_probe(config: AR1Config, nu: float, x_grid: Sequence[float], reps: int, n: int, seed: int,
                    statistic: Callable[[np.ndarray], float] = kendall_tau_fast, theta: float = 0.0, order: int = 2,
                    threads: int = 1, progress: bool = False) -> List[MDPProbeRow]:
    """Empirical P(sqrt(n) (U_n - theta) / (m nu) >= x) against 1 - Phi(x) over independent paths

    Replication k simulates the pair stream (seed, k, 0) so tables are deterministic given seed.
    """
    if nu <= 0:
        raise ValueError(f"nu must be positive, found {nu}")
    if reps < 10 ** 4 and min(x_grid) <= 2:
        logger.warning(f"Only {reps} replications; tail ratios at x <= 2 are expected to be noisy")

    def replicate(k):
        sample = simulate_bivariate_pairs(1, config, n, seed, replication=k)[0]
        return math.sqrt(n) * (statistic(sample.data) - theta) / (order * nu)

    values = np.array(ordered_map(replicate, range(reps), threads=threads, desc="mdp-probe", progress=progress))
    rows = []
    for x in x_grid:
        tail = float(np.mean(values >= x))
        reference = normal_sf(x)
        rows.append(MDPProbeRow(x=float(x), empirical_tail=tail, normal_tail=reference, ratio=tail / reference,
                                se=math.sqrt(tail * (1 - tail) / reps)))
    return rows


@dataclass(frozen=True)
class StudyResult:
    empirical_size: float
    size_ci: Tuple[float, float]
    empirical_power: Optional[float]
    power_ci: Optional[Tuple[float, float]]
    size_decisions: List[bool]
    power_decisions: List[bool]


def _ci(decisions: List[bool]) -> Tuple[float, float]:
    interval = binomtest(int(sum(decisions)), len(decisions)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(interval.low), float(interval.high)


def _pair_sigma2(config: AR1Config) -> float:
    if config.innovation != InnovationModes.GAUSSIAN.value:
        raise ConfigError("The closed-form sigma^2 needs Gaussian innovations; pass sigma2 explicitly")
    rho1, rho2 = config.for_dim(2)
    return sigma2_kendall_closed_form(float(rho1), float(rho2))


def size_power_study(p: int, n: int, reps: int, alpha: float, seed: int, config: Optional[AR1Config] = None,
                     alt_correlation: Optional[float] = None, sigma2: Optional[float] = None, threads: int = 1,
                     progress: bool = False) -> StudyResult:
    """Rejection frequencies under independence and, when alt_correlation is set, under coupled innovations

    Null replications use streams below derive_seed(seed, 0), alternative ones below
    derive_seed(seed, 1); replication k always draws the same pairs whatever reps is.
    """
    if reps < 200:
        logger.warning(f"Only {reps} replications; the binomial intervals will be wide")
    if p < 2:
        raise ValueError(f"The maximum test needs at least 2 pairs, found {p}")
    config = AR1Config(coeffs=(0.3, 0.5)) if config is None else config
    sigma2 = _pair_sigma2(config) if sigma2 is None else sigma2
    null_seed, alt_seed = derive_seed(seed, 0), derive_seed(seed, 1)

    def decide(master, correlation):
        def replicate(k):
            samples = simulate_bivariate_pairs(p, config, n, master, correlations=[correlation] * p, replication=k)
            return max_test(pair_statistics(samples, sigma2), alpha).reject
        return replicate

    size_decisions = ordered_map(decide(null_seed, 0.0), range(reps), threads=threads, desc="size", progress=progress)
    power_decisions = []
    if alt_correlation is not None:
        power_decisions = ordered_map(decide(alt_seed, alt_correlation), range(reps), threads=threads, desc="power", progress=progress)
    size = float(np.mean(size_decisions))
    logger.info(f"Empirical size {size:.4f} over {reps} replications at alpha={alpha}")
    return StudyResult(
        empirical_size=size,
        size_ci=_ci(size_decisions),
        empirical_power=float(np.mean(power_decisions)) if power_decisions else None,
        power_ci=_ci(power_decisions) if power_decisions else None,
        size_decisions=list(size_decisions),
        power_decisions=list(power_decisions),
    )
