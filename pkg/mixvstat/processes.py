"""Stationary geometrically mixing sequences: AR(1) paths, bivariate pairs and partially linear model data"""
from dataclasses import asdict, dataclass, replace
from enum import Enum
import logging
import math
import numpy as np
from scipy.signal import lfilter
from typing import Callable, List, Optional, Sequence, Tuple, Union

from mixvstat.errors import ConfigError
from mixvstat.replication import make_rng

logger = logging.getLogger(__name__)

DEFAULT_BURN_IN = 1000
# Stream ids of the partially linear model generator
PLR_STREAMS = {"X": 1, "W": 2, "noise": 3}


class InnovationModes(Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"
    UNIFORM = "uniform"


class InitModes(Enum):
    EXACT_STATIONARY = "exact_stationary"
    BURN_IN = "burn_in"


@dataclass(frozen=True)
class AR1Config:
    """X_{i+1,j} = alpha_j X_{i,j} + eps_{i+1,j}, independent across coordinates

    A single coefficient is broadcast to every coordinate. Innovations are sigma * N(0, 1),
    sigma * t(df) or uniform on [low, high]. The exact stationary start is only available
    for Gaussian innovations; otherwise the path is started at 0 and burn_in steps are dropped.
    """
    coeffs: Tuple[float, ...] = (0.5,)
    innovation: str = InnovationModes.GAUSSIAN.value
    sigma: float = 1.0
    df: float = 5.0
    low: float = -1.0
    high: float = 1.0
    init: Optional[str] = None  # defaults to exact_stationary for Gaussian innovations, burn_in otherwise
    burn_in: int = DEFAULT_BURN_IN

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(a) for a in np.atleast_1d(self.coeffs)))
        if not self.coeffs:
            raise ConfigError("An AR1Config needs at least one coefficient")
        for alpha in self.coeffs:
            if not abs(alpha) < 1:
                raise ConfigError(f"AR(1) coefficients must satisfy |alpha| < 1, found {alpha}")
        if self.innovation not in [e.value for e in InnovationModes]:
            raise ConfigError(f"An AR1Config was defined with innovation {self.innovation}, which is not an accepted innovation ({[e.value for e in InnovationModes]})")
        if self.init is None:
            default = InitModes.EXACT_STATIONARY if self.innovation == InnovationModes.GAUSSIAN.value else InitModes.BURN_IN
            object.__setattr__(self, "init", default.value)
        if self.init not in [e.value for e in InitModes]:
            raise ConfigError(f"An AR1Config was defined with init {self.init}, which is not an accepted init ({[e.value for e in InitModes]})")
        if self.init == InitModes.EXACT_STATIONARY.value and self.innovation != InnovationModes.GAUSSIAN.value:
            raise ConfigError(f"The exact stationary start needs Gaussian innovations, found {self.innovation}")
        if self.sigma <= 0 or self.df <= 2 or self.low >= self.high:
            raise ConfigError(f"Invalid innovation parameters sigma={self.sigma}, df={self.df}, low={self.low}, high={self.high}")
        if self.burn_in < 0:
            raise ConfigError(f"Burn-in length must be non-negative, found {self.burn_in}")

    def for_dim(self, d: int) -> np.ndarray:
        """Per-coordinate coefficients for a d-dimensional path"""
        if len(self.coeffs) == 1:
            return np.full(d, self.coeffs[0])
        if len(self.coeffs) != d:
            raise ConfigError(f"Config has {len(self.coeffs)} coefficients, cannot simulate {d} coordinates")
        return np.array(self.coeffs)

    @property
    def innovation_sd(self) -> float:
        if self.innovation == InnovationModes.GAUSSIAN.value:
            return self.sigma
        if self.innovation == InnovationModes.STUDENT_T.value:
            return self.sigma * math.sqrt(self.df / (self.df - 2))
        return (self.high - self.low) / math.sqrt(12)

    def stationary_sd(self, d: int = 1) -> np.ndarray:
        return self.innovation_sd / np.sqrt(1 - self.for_dim(d) ** 2)

    def innovations(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.innovation == InnovationModes.GAUSSIAN.value:
            return self.sigma * rng.standard_normal(size)
        if self.innovation == InnovationModes.STUDENT_T.value:
            return self.sigma * rng.standard_t(self.df, size)
        return rng.uniform(self.low, self.high, size)


@dataclass(frozen=True)
class ProcessSample:
    """n x d path together with the configuration and stream that produced it"""
    data: np.ndarray
    config: dict
    seed: int
    stream: Tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def columns(self) -> List[str]:
        return [f"c{k}" for k in range(self.data.shape[1])]

    def to_csv(self, path) -> None:
        from mixvstat.reports import write_csv
        write_csv(path, self.columns(), self.data.tolist())


def _filter(alphas: np.ndarray, innovations: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Runs the AR(1) recursion X_1 = alpha x0 + eps_1 column by column"""
    out = np.empty_like(innovations)
    for j, alpha in enumerate(alphas):
        out[:, j], _ = lfilter([1.0], [1.0, -alpha], innovations[:, j], zi=[alpha * start[j]])
    return out


def _ar1_path(config: AR1Config, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Innovations are drawn before the initial state, so alpha = 0 reproduces the innovation stream"""
    alphas = config.for_dim(d)
    exact = config.init == InitModes.EXACT_STATIONARY.value
    burn = 0 if exact else config.burn_in
    innovations = config.innovations(rng, (n + burn, d))
    start = config.stationary_sd(d) * rng.standard_normal(d) if exact else np.zeros(d)
    return _filter(alphas, innovations, start)[burn:]


def simulate_ar1(config: AR1Config, n: int, seed: int, d: Optional[int] = None) -> ProcessSample:
    """Simulates n steps of a stationary AR(1) path with one coordinate per coefficient"""
    if n < 1:
        raise ValueError(f"Path length must be positive, found {n}")
    d = len(config.coeffs) if d is None else d
    data = _ar1_path(config, n, d, make_rng(seed))
    return ProcessSample(data=data, config=asdict(config), seed=seed)


def _correlated_pair(config: AR1Config, n: int, correlation: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian AR(1) pair whose innovations have correlation c, started from the joint stationary law"""
    if config.innovation != InnovationModes.GAUSSIAN.value:
        raise ConfigError(f"Correlated pairs need Gaussian innovations, found {config.innovation}")
    alphas = config.for_dim(2)
    w = rng.standard_normal((n, 2))
    complement = math.sqrt(max(1.0 - correlation ** 2, 0.0))
    innovations = config.sigma * np.column_stack([w[:, 0], correlation * w[:, 0] + complement * w[:, 1]])
    sds = config.stationary_sd(2)
    # Stationary correlation of the two coordinates
    r = correlation * math.sqrt((1 - alphas[0] ** 2) * (1 - alphas[1] ** 2)) / (1 - alphas[0] * alphas[1])
    z = rng.standard_normal(2)
    start = sds * np.array([z[0], r * z[0] + math.sqrt(max(1.0 - r ** 2, 0.0)) * z[1]])
    return _filter(alphas, innovations, start)


def simulate_bivariate_pairs(p: int, configs: Union[AR1Config, Sequence[AR1Config]], n: int, seed: int,
                             correlations: Optional[Sequence[float]] = None, replication: Optional[int] = None) -> List[ProcessSample]:
    """p mutually independent bivariate AR(1) samples

    Pair l draws from stream (seed, l), or (seed, replication, l) inside replication loops, so
    adding pairs never changes the existing ones. Without correlations the two coordinates
    are independent; a correlation c couples their Gaussian innovations.
    """
    if p < 1:
        raise ValueError(f"Number of pairs must be positive, found {p}")
    configs = [configs] * p if isinstance(configs, AR1Config) else list(configs)
    if len(configs) != p:
        raise ConfigError(f"Need one config per pair, found {len(configs)} for {p} pairs")
    correlations = [0.0] * p if correlations is None else [float(c) for c in np.broadcast_to(correlations, (p,))]
    samples = []
    for pair, (config, correlation) in enumerate(zip(configs, correlations)):
        if not -1 <= correlation <= 1:
            raise ConfigError(f"Innovation correlations must lie in [-1, 1], found {correlation}")
        stream = (pair,) if replication is None else (replication, pair)
        rng = make_rng(seed, *stream)
        if correlation == 0.0:
            data = _ar1_path(config, n, 2, rng)
        else:
            data = _correlated_pair(config, n, correlation, rng)
        samples.append(ProcessSample(data=data, config=dict(asdict(config), correlation=correlation), seed=seed, stream=stream))
    return samples


@dataclass(frozen=True)
class PLRData:
    """Y = X beta* + g(W) + eps"""
    Y: np.ndarray
    X: np.ndarray
    W: np.ndarray
    beta_star: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        n = self.Y.shape[0]
        if self.X.shape[0] != n or self.W.shape[0] != n:
            raise ValueError(f"Y, X and W must have the same number of rows, found {n}, {self.X.shape[0]}, {self.W.shape[0]}")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def permuted(self, order: np.ndarray) -> "PLRData":
        return replace(self, Y=self.Y[order], X=self.X[order], W=self.W[order])

    def columns(self) -> List[str]:
        return ["Y", "W"] + [f"X{k}" for k in range(self.p)]

    def to_csv(self, path) -> None:
        from mixvstat.reports import write_csv
        write_csv(path, self.columns(), np.column_stack([self.Y, self.W, self.X]).tolist())

    @classmethod
    def from_csv(cls, path) -> "PLRData":
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(Y=table[:, 0], W=table[:, 1], X=table[:, 2:], beta_star=np.full(table.shape[1] - 2, np.nan))


def default_beta_star(p: int, s: int) -> np.ndarray:
    """s leading coefficients alternating 2, -2, 2, ..., zeros elsewhere"""
    if not 0 <= s <= p:
        raise ValueError(f"Sparsity must lie in [0, p={p}], found {s}")
    beta = np.zeros(p)
    beta[:s] = 2.0 * (-1.0) ** np.arange(s)
    return beta


def default_g(w: np.ndarray) -> np.ndarray:
    return 2 * np.sin(w)


def simulate_plr(n: int, p: int, s: int, seed: int, beta_star: Optional[np.ndarray] = None,
                 g_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None, design: Optional[AR1Config] = None,
                 w_design: Optional[AR1Config] = None, noise: Optional[AR1Config] = None) -> PLRData:
    """Partially linear model data with AR(1) design coordinates and W, and noise independent of both

    X, W and the noise use the streams (seed, 1), (seed, 2) and (seed, 3). The noise law is
    the innovation law of the noise config (its coefficient must be 0 for i.i.d. noise).
    """
    if n < 2:
        raise ValueError(f"Need at least 2 observations, found {n}")
    beta_star = default_beta_star(p, s) if beta_star is None else np.asarray(beta_star, dtype=float)
    if beta_star.shape != (p,):
        raise ValueError(f"beta_star must have length p={p}, found shape {beta_star.shape}")
    if int(np.count_nonzero(beta_star)) != s:
        raise ValueError(f"beta_star must have exactly s={s} nonzero entries, found {np.count_nonzero(beta_star)}")
    g_fn = default_g if g_fn is None else g_fn
    design = AR1Config() if design is None else design
    w_design = AR1Config() if w_design is None else w_design
    noise = AR1Config(coeffs=(0.0,)) if noise is None else noise
    X = _ar1_path(design, n, p, make_rng(seed, PLR_STREAMS["X"]))
    W = _ar1_path(w_design, n, 1, make_rng(seed, PLR_STREAMS["W"]))[:, 0]
    eps = _ar1_path(noise, n, 1, make_rng(seed, PLR_STREAMS["noise"]))[:, 0]
    Y = X @ beta_star + g_fn(W) + eps
    return PLRData(Y=Y, X=X, W=W, beta_star=beta_star, seed=seed)


def stationary_sampler(config: AR1Config, d: int = 1) -> Callable[[np.random.Generator, int], np.ndarray]:
    """i.i.d. draws from the stationary Gaussian marginal of a Gaussian AR(1) config"""
    if config.innovation != InnovationModes.GAUSSIAN.value:
        raise ConfigError("Stationary marginal sampling needs Gaussian innovations")
    sds = config.stationary_sd(d)

    def sampler(rng, size):
        return rng.standard_normal((size, d)) * sds

    return sampler


def path_sampler(config: AR1Config, d: int = 1) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Stationary paths of the given length drawn from an existing generator"""
    def sampler(rng, size):
        return _ar1_path(config, size, d, rng)

    return sampler
