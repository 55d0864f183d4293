from itertools import combinations, product
import math
import numpy as np
import pytest
from scipy.stats import kendalltau

from mixvstat.expansion import rff_expand_pd
from mixvstat.kernels import ApproxDomain, get_kernel, spearman_base_kernel
from mixvstat.processes import AR1Config, path_sampler, stationary_sampler
from mixvstat.vstat import (_count_inversions, bias_constants, degeneracy_level, hoeffding_components, hoeffding_project, kendall_tau_fast,
                            nu_squared, residual_probability, spearman_rho, u_statistic, v_statistic)


def normal_sampler(d):
    return lambda rng, size: rng.standard_normal((size, d))


def kendall_brute_force(sample):
    """sum over i < j of sign(x_i - x_j) sign(y_i - y_j), divided by the number of pairs"""
    n = sample.shape[0]
    x, y = sample[:, 0], sample[:, 1]
    signs = np.sign(x[:, None] - x[None, :]) * np.sign(y[:, None] - y[None, :])
    return np.triu(signs, 1).sum() / (n * (n - 1) / 2)


### Statistic tests

def test_v_statistic_brute_force():
    """V-statistics average over every tuple, repetitions included"""
    sample = np.random.default_rng(0).standard_normal((12, 1))
    spec = get_kernel("gaussian")
    expected = np.mean([spec(x, y) for x, y in product(sample, repeat=2)])
    assert v_statistic(spec, sample) == pytest.approx(expected, rel=1e-12)

def test_u_statistic_brute_force():
    """U-statistics average over tuples of distinct indices"""
    sample = np.random.default_rng(1).standard_normal((8, 2))
    spec = spearman_base_kernel()
    n = sample.shape[0]
    values = [spec(sample[i], sample[j], sample[k]) for i, j, k in product(range(n), repeat=3) if len({i, j, k}) == 3]
    assert u_statistic(spec, sample) == pytest.approx(np.mean(values), abs=1e-12)

def test_statistics_thread_independent():
    """Threaded summation gives bit-identical values"""
    sample = np.random.default_rng(2).standard_normal((40, 1))
    spec = get_kernel("laplacian")
    assert v_statistic(spec, sample, threads=1) == v_statistic(spec, sample, threads=4)

def test_u_statistic_too_few_points():
    """A U-statistic of order m needs m points"""
    with pytest.raises(ValueError):
        u_statistic(spearman_base_kernel(), np.zeros((2, 2)))

def test_v_statistic_wrong_dimension():
    """Samples must match the kernel dimension"""
    with pytest.raises(ValueError):
        v_statistic(get_kernel("gaussian"), np.zeros((5, 2)))

### Rank statistic tests

def test_count_inversions_brute_force():
    """Partition-based inversion counts agree with the quadratic count"""
    ranks = np.random.default_rng(3).integers(0, 20, size=57)
    expected = sum(1 for i, j in combinations(range(len(ranks)), 2) if ranks[i] > ranks[j])
    assert _count_inversions(ranks) == expected

def test_count_inversions_large_inputs():
    """Inversion counts stay exact on long inputs with many repeated values"""
    rng = np.random.default_rng(30)
    for n, k in [(500, 3), (2000, 50), (3000, 10 ** 6)]:
        ranks = rng.integers(0, k, size=n)
        expected = int(np.triu(ranks[:, None] > ranks[None, :], 1).sum())
        assert _count_inversions(ranks) == expected

def test_count_inversions_descending():
    """A strictly decreasing input has every pair inverted"""
    n = 4097
    assert _count_inversions(np.arange(n)[::-1]) == n * (n - 1) // 2
    assert _count_inversions(np.arange(n)) == 0
    assert _count_inversions(np.array([5])) == 0

def test_kendall_fast_random_tied_instances():
    """The fast Kendall statistic equals the brute-force pair average on random instances with ties"""
    rng = np.random.default_rng(31)
    for _ in range(1000):
        n = int(rng.integers(2, 501))
        k = int(rng.integers(2, 51))
        sample = rng.integers(0, k, size=(n, 2)).astype(float)
        assert kendall_tau_fast(sample) == pytest.approx(kendall_brute_force(sample), abs=1e-12)

def test_kendall_fast_matches_scipy():
    """Without ties the fast Kendall statistic is scipy's tau"""
    sample = np.random.default_rng(4).standard_normal((300, 2))
    sample[:, 1] += 0.5 * sample[:, 0]
    assert kendall_tau_fast(sample) == pytest.approx(kendalltau(sample[:, 0], sample[:, 1])[0], abs=1e-12)

def test_kendall_fast_with_ties():
    """Tied pairs contribute 0 as in the U-statistic of the Kendall kernel"""
    sample = np.random.default_rng(5).integers(0, 4, size=(30, 2)).astype(float)
    assert kendall_tau_fast(sample) == pytest.approx(u_statistic(get_kernel("kendall"), sample), abs=1e-12)

def test_kendall_perfect_concordance():
    """Monotone samples have tau = 1 and reversed ones tau = -1"""
    x = np.arange(10.0)
    assert kendall_tau_fast(np.column_stack([x, x ** 3])) == 1.0
    assert kendall_tau_fast(np.column_stack([x, -x])) == -1.0

def test_kendall_needs_bivariate():
    """Kendall's tau needs two columns"""
    with pytest.raises(ValueError):
        kendall_tau_fast(np.zeros((5, 3)))

def test_spearman_matches_v_statistic():
    """The rank-count Spearman statistic is the V-statistic of its order-3 kernel"""
    sample = np.random.default_rng(6).standard_normal((15, 2))
    assert spearman_rho(sample) == pytest.approx(v_statistic(spearman_base_kernel(), sample), abs=1e-12)

### Hoeffding decomposition tests

def test_degeneracy_linear_kernel():
    """x.y under a centered law is degenerate: every first projection vanishes"""
    level = degeneracy_level(get_kernel("linear"), normal_sampler(1), tol=0.05, mc_budget=100_000, rng=np.random.default_rng(7))
    assert level.level == 1
    assert not level.inconclusive

def test_degeneracy_gaussian_kernel():
    """The Gaussian kernel is not degenerate"""
    level = degeneracy_level(get_kernel("gaussian"), normal_sampler(1), tol=0.05, mc_budget=20_000, rng=np.random.default_rng(8))
    assert level.level == 0

def test_degeneracy_negative_tolerance():
    """Tolerances must be positive"""
    with pytest.raises(ValueError):
        degeneracy_level(get_kernel("gaussian"), normal_sampler(1), tol=0.0, mc_budget=1000, rng=np.random.default_rng(0))

def test_first_projection_gaussian_kernel():
    """g_1(x) = exp(-x^2 / 4) / sqrt(2) for the Gaussian kernel under N(0, 1)"""
    points = np.array([[[0.0]], [[1.0]], [[-2.0]]])
    estimate = hoeffding_project(get_kernel("gaussian"), normal_sampler(1), points, 1, 50_000, np.random.default_rng(9))
    expected = np.exp(-points[:, 0, 0] ** 2 / 4) / math.sqrt(2)
    assert np.all(np.abs(estimate.g - expected) < 5 * estimate.g_se + 1e-3)

def test_second_projection_linear_kernel():
    """The degenerate component of x.y is x.y itself"""
    points = np.random.default_rng(10).standard_normal((5, 2, 1))
    estimate = hoeffding_project(get_kernel("linear"), normal_sampler(1), points, 2, 50_000, np.random.default_rng(11))
    expected = points[:, 0, 0] * points[:, 1, 0]
    assert np.all(np.abs(estimate.f - expected) < 5 * estimate.f_se + 1e-3)

def test_projection_shape_checked():
    """Projection points must have p arguments"""
    with pytest.raises(ValueError):
        hoeffding_project(get_kernel("gaussian"), normal_sampler(1), np.zeros((3, 2, 1)), 1, 1000, np.random.default_rng(0))

SECOND_ORDER_KERNELS = ["gaussian", "laplacian", "cauchy", "hat", "cosine", "box1", "kendall", "linear"]

@pytest.mark.parametrize("kernel_id", SECOND_ORDER_KERNELS)
def test_hoeffding_reconstruction(kernel_id):
    """f(x, y) - theta = f_1(x) + f_1(y) + f_2(x, y) within 3 SE at nearly all of 20 points, and within 5 SE at all of them"""
    spec = get_kernel(kernel_id)
    rng = np.random.default_rng(40)
    proj = hoeffding_components(spec, normal_sampler(spec.dim), 20_000, rng).proj
    points = rng.standard_normal((20, 2, spec.dim))
    f1_x = proj.project(points[:, [0], :], 1, rng)
    f1_y = proj.project(points[:, [1], :], 1, rng)
    f2 = proj.project(points, 2, rng)
    expected = spec.func(points[:, 0, :], points[:, 1, :]) - proj.theta
    se = np.sqrt(f1_x.f_se ** 2 + f1_y.f_se ** 2 + f2.f_se ** 2)
    gap = np.abs(f1_x.f + f1_y.f + f2.f - expected)
    assert np.sum(gap <= 3 * se + 1e-9) >= 18
    assert np.all(gap <= 5 * se + 1e-9)

@pytest.mark.parametrize("kernel_id", SECOND_ORDER_KERNELS)
def test_hoeffding_components_centered(kernel_id):
    """E f_1(X) = 0 and E f_2(x, Y) = 0 under the sampling law"""
    spec = get_kernel(kernel_id)
    rng = np.random.default_rng(41)
    proj = hoeffding_components(spec, normal_sampler(spec.dim), 5_000, rng).proj
    draws = rng.standard_normal((400, 1, spec.dim))
    f1 = proj.project(draws, 1, rng)
    band = 5 * (f1.f.std(ddof=1) / math.sqrt(len(draws)) + proj.se_theta + f1.g_se.max()) + 1e-9
    assert abs(f1.f.mean()) <= band
    anchor = rng.standard_normal((1, 1, spec.dim))
    pairs = np.concatenate([np.repeat(anchor, len(draws), axis=0), draws], axis=1)
    f2 = proj.project(pairs, 2, rng)
    assert abs(f2.f.mean()) <= 5 * (f2.f.std(ddof=1) / math.sqrt(len(draws)) + f2.f_se.max()) + 1e-9

### Auxiliary constant tests

def test_nu_squared_ar1_long_run_variance():
    """The long-run variance of an AR(1) path with coefficient 0.5 is 1 / (1 - 0.5)^2 = 4"""
    estimate = nu_squared(lambda x: x[:, 0], path_sampler(AR1Config(coeffs=(0.5,))), lag_cap=30, mc_budget=5000,
                          rng=np.random.default_rng(12))
    assert estimate.value == pytest.approx(4.0, abs=max(4 * estimate.se, 0.2))
    assert not estimate.clamped

def test_nu_squared_short_path():
    """Paths must be longer than the lag cap"""
    with pytest.raises(ValueError):
        nu_squared(lambda x: x[:, 0], path_sampler(AR1Config()), lag_cap=20, mc_budget=20, rng=np.random.default_rng(0))

def test_bias_constants_gaussian():
    """Bias constants of the Gaussian expansion on [-3, 3]^2 under N(0, 4/3)"""
    spec = get_kernel("gaussian")
    expanded = rff_expand_pd(spec, 3.0, 0.05, 200, 0)
    domain = ApproxDomain(order=2, dim=1, halfwidth=3.0)
    constants = bias_constants(spec, expanded, stationary_sampler(AR1Config()), domain, 5000, np.random.default_rng(13), n_anchors=10)
    assert len(constants.s) == len(constants.v) == 2
    assert all(0 <= s <= 1 for s in constants.s)
    # P(|X| > 3) for X ~ N(0, 4/3) is about 0.0093 per coordinate
    assert constants.v[0] == pytest.approx(math.sqrt(1 - (1 - 0.0093) ** 2), abs=0.05)
    expected = 0.05 + sum(s * v for s, v in zip(constants.s, constants.v)) + expanded.F * sum(constants.v)
    assert constants.t_prime == pytest.approx(expected)
    assert constants.best_effort

def test_residual_probability():
    """n sum_l P(|X_l| >= M) + n^2 J M2 D"""
    assert residual_probability(10, [0.01, 0.02]) == pytest.approx(0.3)
    assert residual_probability(10, [0.0], J_total=2, M2=0.01, D=0.5) == pytest.approx(1.0)

def test_residual_probability_negative():
    """Negative inputs are rejected"""
    with pytest.raises(ValueError):
        residual_probability(10, [-0.1])
