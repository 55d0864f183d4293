"""Penalized pairwise-difference estimator of the sparse linear part of a partially linear model

For Y = X beta* + g(W) + eps the objective is

    (n choose 2)^{-1} sum_{i<j} K_h(W_i - W_j) (Y_i - Y_j - (X_i - X_j)^T beta)^2 + lambda ||beta||_1

with K_h(w) = K(w / h) / h. Pairs with nearly equal W cancel g, so no centering is needed.
"""
from dataclasses import dataclass
from enum import Enum
import logging
import math
import numpy as np
from scipy.integrate import quad
from scipy.sparse.csgraph import laplacian
from scipy.sparse.linalg import LinearOperator, eigsh
from scipy.stats import norm
from typing import Callable, List, Optional, Sequence, Union

from mixvstat.processes import AR1Config, PLRData, simulate_plr
from mixvstat.replication import derive_seed, ordered_map

logger = logging.getLogger(__name__)

# Largest p for which T is materialized
MAX_DENSE_P = 500
MIN_BANDWIDTH = 1e-8


class OptimizerModes(Enum):
    COORDINATE_DESCENT = "coordinate_descent"
    PROXIMAL_GRADIENT = "proximal_gradient"


@dataclass(frozen=True)
class PLRConfig:
    """Tuning of the penalized estimator; kernel_K must be a nonnegative density"""
    h_n: float
    lambda_n: float
    kernel_K: Callable[[np.ndarray], np.ndarray] = norm.pdf
    optimizer: Optional[str] = None  # coordinate descent when T is materialized, proximal gradient otherwise
    tol: float = 1e-8
    max_iter: int = 10_000

    def __post_init__(self):
        if self.h_n < MIN_BANDWIDTH:
            raise ValueError(f"Bandwidth must be at least {MIN_BANDWIDTH}, found {self.h_n}")
        if self.lambda_n < 0:
            raise ValueError(f"Penalty must be non-negative, found {self.lambda_n}")
        if self.optimizer is not None and self.optimizer not in [e.value for e in OptimizerModes]:
            raise ValueError(f"A PLRConfig was defined with optimizer {self.optimizer}, which is not an accepted optimizer ({[e.value for e in OptimizerModes]})")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError(f"Need tol > 0 and max_iter >= 1, found tol={self.tol}, max_iter={self.max_iter}")
        grid = np.linspace(-10, 10, 201)
        if np.any(np.asarray(self.kernel_K(grid)) < 0):
            raise ValueError("The kernel K must be nonnegative")
        mass, _ = quad(lambda w: float(self.kernel_K(np.array([w]))[0]), -np.inf, np.inf, limit=200)
        if abs(mass - 1) > 1e-6:
            raise ValueError(f"The kernel K must integrate to 1, found {mass}")


@dataclass(frozen=True)
class PLRFit:
    beta_hat: np.ndarray
    objective_trace: List[float]
    iterations: int
    active_set: List[int]
    kkt_violation: float
    converged: bool
    optimizer: str


@dataclass(frozen=True)
class Quadratic:
    """Quadratic part of the objective as beta^T T beta - 2 b^T beta + c"""
    T: Union[np.ndarray, LinearOperator]
    b: np.ndarray
    c: float
    n_pairs: int

    @property
    def dense(self) -> bool:
        return isinstance(self.T, np.ndarray)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.T @ v if self.dense else self.T.matvec(v)

    def value(self, beta: np.ndarray, lambda_n: float = 0.0) -> float:
        return float(beta @ self.matvec(beta) - 2 * self.b @ beta + self.c + lambda_n * np.sum(np.abs(beta)))


def pair_weights(W: np.ndarray, h: float, kernel_K: Callable = norm.pdf) -> np.ndarray:
    """n x n matrix of K_h(W_i - W_j) with a zero diagonal"""
    W = np.asarray(W, dtype=float)
    weights = kernel_K((W[:, None] - W[None, :]) / h) / h
    np.fill_diagonal(weights, 0.0)
    return weights


def plr_objective(beta: np.ndarray, data: PLRData, h: float, lambda_n: float, kernel_K: Callable = norm.pdf) -> float:
    """Direct pairwise evaluation of the penalized objective"""
    if h <= 0:
        raise ValueError(f"Bandwidth must be positive, found {h}")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.p,):
        raise ValueError(f"beta must have length {data.p}, found shape {beta.shape}")
    residual = data.Y - data.X @ beta
    n = data.n
    partial = []
    for i in range(n - 1):
        weights = kernel_K((data.W[i] - data.W[i + 1:]) / h) / h
        partial.append(math.fsum(weights * (residual[i] - residual[i + 1:]) ** 2))
    return math.fsum(partial) / math.comb(n, 2) + lambda_n * float(np.sum(np.abs(beta)))


def precompute_quadratic(data: PLRData, h: float, kernel_K: Callable = norm.pdf, dense: Optional[bool] = None) -> Quadratic:
    """T, b and c through the graph Laplacian L of the pair weights: sum_{i<j} w_ij (x_i - x_j)(x_i - x_j)^T = X^T L X"""
    if data.n < 2:
        raise ValueError(f"Need at least 2 observations, found {data.n}")
    n_pairs = math.comb(data.n, 2)
    lap = laplacian(pair_weights(data.W, h, kernel_K))
    b = data.X.T @ (lap @ data.Y) / n_pairs
    c = float(data.Y @ (lap @ data.Y)) / n_pairs
    dense = data.p <= MAX_DENSE_P if dense is None else dense
    if dense:
        T = data.X.T @ (lap @ data.X) / n_pairs
        return Quadratic(T=0.5 * (T + T.T), b=b, c=c, n_pairs=n_pairs)
    logger.debug(f"Using an implicit operator for T with p={data.p}")
    X = data.X
    operator = LinearOperator((data.p, data.p), matvec=lambda v: X.T @ (lap @ (X @ np.ravel(v))) / n_pairs, dtype=float)
    return Quadratic(T=operator, b=b, c=c, n_pairs=n_pairs)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0)


def kkt_violation(gradient: np.ndarray, beta: np.ndarray, lambda_n: float) -> float:
    """Largest violation of the subgradient conditions of the l1-penalized quadratic"""
    zero = beta == 0
    residual = np.where(zero, np.maximum(np.abs(gradient) - lambda_n, 0.0), np.abs(gradient + lambda_n * np.sign(beta)))
    return float(residual.max()) if residual.size else 0.0


def _stalled(step: float, beta: np.ndarray) -> bool:
    """No coordinate moves beyond round-off"""
    return step <= 1e-14 * max(1.0, float(np.max(np.abs(beta))) if beta.size else 1.0)


def _coordinate_descent(quadratic: Quadratic, lambda_n: float, beta: np.ndarray, tol: float, max_iter: int):
    T, b = quadratic.T, quadratic.b
    diag = np.diag(T).copy()
    T_beta = T @ beta
    trace = [quadratic.value(beta, lambda_n)]
    kkt = kkt_violation(2 * (T_beta - b), beta, lambda_n)
    iterations = 0
    while kkt > tol and iterations < max_iter:
        step = 0.0
        for k in range(beta.shape[0]):
            if diag[k] <= 0:
                continue
            partial = b[k] - (T_beta[k] - diag[k] * beta[k])
            new = soft_threshold(partial, lambda_n / 2) / diag[k]
            if new != beta[k]:
                step = max(step, abs(new - beta[k]))
                T_beta += T[:, k] * (new - beta[k])
                beta[k] = new
        iterations += 1
        trace.append(quadratic.value(beta, lambda_n))
        kkt = kkt_violation(2 * (T_beta - b), beta, lambda_n)
        if _stalled(step, beta):
            break
    return beta, trace, iterations, kkt


def _lipschitz_estimate(quadratic: Quadratic) -> float:
    if quadratic.dense:
        return 2 * float(np.linalg.eigvalsh(quadratic.T)[-1])
    return 2 * float(eigsh(quadratic.T, k=1, which="LA", return_eigenvectors=False)[0])


def _proximal_gradient(quadratic: Quadratic, lambda_n: float, beta: np.ndarray, tol: float, max_iter: int):
    """ISTA with backtracking on the smooth part beta^T T beta - 2 b^T beta + c"""
    step_L = max(_lipschitz_estimate(quadratic) / 4, 1e-12)
    smooth = quadratic.value(beta)
    gradient = 2 * (quadratic.matvec(beta) - quadratic.b)
    trace = [smooth + lambda_n * float(np.sum(np.abs(beta)))]
    kkt = kkt_violation(gradient, beta, lambda_n)
    iterations = 0
    while kkt > tol and iterations < max_iter:
        while True:
            candidate = soft_threshold(beta - gradient / step_L, lambda_n / step_L)
            delta = candidate - beta
            candidate_smooth = quadratic.value(candidate)
            if candidate_smooth <= smooth + gradient @ delta + step_L / 2 * delta @ delta + 1e-15 * abs(smooth):
                break
            step_L *= 2
        beta, smooth = candidate, candidate_smooth
        gradient = 2 * (quadratic.matvec(beta) - quadratic.b)
        iterations += 1
        trace.append(smooth + lambda_n * float(np.sum(np.abs(beta))))
        kkt = kkt_violation(gradient, beta, lambda_n)
        if _stalled(float(np.max(np.abs(delta))) if delta.size else 0.0, beta):
            break
    return beta, trace, iterations, kkt


def fit_plr(data: PLRData, config: PLRConfig, quadratic: Optional[Quadratic] = None, beta0: Optional[np.ndarray] = None) -> PLRFit:
    """Minimizes the penalized objective from beta0 (zero by default)

    Stops when the KKT violation is at most tol or when the iterates stop moving;
    the fit is flagged as not converged when the violation is still above tol.
    """
    quadratic = precompute_quadratic(data, config.h_n, config.kernel_K) if quadratic is None else quadratic
    optimizer = config.optimizer
    if optimizer is None:
        optimizer = OptimizerModes.COORDINATE_DESCENT.value if quadratic.dense else OptimizerModes.PROXIMAL_GRADIENT.value
    if optimizer == OptimizerModes.COORDINATE_DESCENT.value and not quadratic.dense:
        raise ValueError("Coordinate descent needs a materialized T")
    beta = np.zeros(data.p) if beta0 is None else np.array(beta0, dtype=float)
    solve = _coordinate_descent if optimizer == OptimizerModes.COORDINATE_DESCENT.value else _proximal_gradient
    beta, trace, iterations, kkt = solve(quadratic, config.lambda_n, beta, config.tol, config.max_iter)
    converged = kkt <= config.tol
    if not converged:
        logger.warning(f"Fit stopped after {iterations} iterations with KKT violation {kkt:.3g} above {config.tol}")
    return PLRFit(
        beta_hat=beta,
        objective_trace=trace,
        iterations=iterations,
        active_set=[int(k) for k in np.flatnonzero(beta)],
        kkt_violation=kkt,
        converged=converged,
        optimizer=optimizer,
    )


def default_tuning(n: int, p: int, c_h: float = 1.0, c_lambda: float = 2.0, h_max: float = 1.0):
    """Returns a tuple with:
        - h_n = c_h sqrt(log p / n) clipped into [sqrt(log p / n), h_max]
        - lambda_n = c_lambda (h_n + sqrt(log p / n))
    """
    if n < 2 or p < 2:
        raise ValueError(f"Need n >= 2 and p >= 2, found n={n}, p={p}")
    base = math.sqrt(math.log(p) / n)
    h_n = min(max(c_h * base, base), max(h_max, base))
    return h_n, c_lambda * (h_n + base)


@dataclass(frozen=True)
class RateRow:
    n: int
    mse: float
    mse_se: float
    rate_proxy: float  # s log p / n
    support_recovery: float  # fraction of replications whose support contains the true support
    h_n: float
    lambda_n: float
    non_converged: int = 0


def rate_experiment(ns: Sequence[int], p: int, s: int, reps: int, seed: int, c_h: float = 1.0, c_lambda: float = 2.0,
                    design: Optional[AR1Config] = None, g_fn: Optional[Callable] = None, noise: Optional[AR1Config] = None,
                    lambda_n: Optional[float] = None, threads: int = 1, progress: bool = False) -> List[RateRow]:
    """Mean squared error of the estimator over replications at each sample size

    Replication r at the k-th sample size uses the data seed derive_seed(seed, k, r).
    """
    ns = list(ns)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError(f"Sample sizes must be increasing, found {ns}")
    if reps < 20:
        logger.warning(f"Only {reps} replications per sample size; the rate check will be noisy")
    rows = []
    for k, n in enumerate(ns):
        h_n, default_lambda = default_tuning(n, p, c_h, c_lambda)
        config = PLRConfig(h_n=h_n, lambda_n=default_lambda if lambda_n is None else lambda_n)

        def replicate(r):
            data = simulate_plr(n, p, s, derive_seed(seed, k, r), design=design, g_fn=g_fn, noise=noise)
            fit = fit_plr(data, config)
            support = set(np.flatnonzero(data.beta_star)) <= set(fit.active_set)
            return float(np.sum((fit.beta_hat - data.beta_star) ** 2)), support, fit.converged

        results = ordered_map(replicate, range(reps), threads=threads, desc=f"n={n}", progress=progress)
        errors = np.array([e for e, _, _ in results])
        rows.append(RateRow(
            n=n,
            mse=float(errors.mean()),
            mse_se=float(errors.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.nan,
            rate_proxy=s * math.log(p) / n,
            support_recovery=float(np.mean([r for _, r, _ in results])),
            h_n=h_n,
            lambda_n=config.lambda_n,
            non_converged=sum(not c for _, _, c in results),
        ))
    return rows
