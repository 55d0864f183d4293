import math
import numpy as np
from numpy import pi
import pytest
from scipy.special import gamma
from scipy.stats import chi

from mixvstat.errors import UnsupportedKernelError
from mixvstat.expansion import (ExpandedKernel, ExpansionReport, budget_add, budget_mul, choose_h_discontinuous,
                                choose_h_lipschitz, combine_add, combine_mul, constant_expansion, exact_linear_expansion,
                                expansion_F, from_json, gamma_constants, lipschitz_constant_tau, mollify, rff_expand_general,
                                product_error_bound, rff_expand_pd, sample_size_heuristic, sign_expansion, spearman_expansion,
                                spearman_from_parts, spearman_parts, to_json, verify_product, verify_sup_error)
from mixvstat.kernels import ApproxDomain, KernelSpec, KernelTags, get_kernel, kernel_domain, sign_kernel, symmetrize


@pytest.fixture(scope="session")
def gaussian():
    return get_kernel("gaussian")


@pytest.fixture(scope="session")
def gaussian_expansion(gaussian):
    return rff_expand_pd(gaussian, M=3, t=0.05, K=2000, rng=0)


### Constant tests

@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_gamma_constants_match_oracles(n):
    """Gamma_1 is the unit sphere area and Gamma_2 the mean norm of a standard normal vector"""
    c1, c2 = gamma_constants(n)
    assert c1 == pytest.approx(2 * pi ** (n / 2) / gamma(n / 2), rel=1e-12)
    assert c2 == pytest.approx(chi(n).mean(), rel=1e-9)

def test_gamma_constants_known_values():
    """Gamma(1) = (2, 0.79788), Gamma(2) = (2 pi, 1.25331), Gamma(3) = (4 pi, 1.59577)"""
    assert gamma_constants(1) == pytest.approx((2, 0.79788), abs=1e-5)
    assert gamma_constants(2) == pytest.approx((2 * pi, 1.25331), abs=1e-5)
    assert gamma_constants(3) == pytest.approx((4 * pi, 1.59577), abs=1e-5)

def test_sample_size_heuristic_value():
    """Direct evaluation for d = 1, m = 2, M = 3, t = 0.05 with unit norms"""
    assert sample_size_heuristic(t=0.05, M=3, m=2, d=1, q=1, mu_q=1, l1_norm=1) == 7385

def test_sample_size_heuristic_t_doubled():
    """Doubling t divides K by more than 2"""
    assert 2 * sample_size_heuristic(0.1, 3, 2, 1, 1, 1, 1) < sample_size_heuristic(0.05, 3, 2, 1, 1, 1, 1)

@pytest.mark.parametrize("h_params", [
    {"L": 1, "t": 0.1, "md": 1, "expected": 0.06267},
    {"L": 2, "t": 0.1, "md": 2, "expected": 0.01995},
])
def test_choose_h_lipschitz(h_params):
    """Bandwidths of Lipschitz kernels"""
    assert choose_h_lipschitz(h_params["L"], h_params["t"], h_params["md"]) == pytest.approx(h_params["expected"], abs=1e-5)

def test_choose_h_lipschitz_linear_in_t():
    """Halving t halves h"""
    assert choose_h_lipschitz(1, 0.05, 1) == pytest.approx(choose_h_lipschitz(1, 0.1, 1) / 2)

def test_choose_h_discontinuous():
    """Bandwidth for the box kernel with M2 = 0.1 and t = 0.01, linear in M2"""
    assert choose_h_discontinuous(0.1, 1, 1, 0.01) == pytest.approx(0.03072, abs=1e-5)
    assert choose_h_discontinuous(0.2, 1, 1, 0.01) == pytest.approx(2 * choose_h_discontinuous(0.1, 1, 1, 0.01))

def test_expansion_F_cosine():
    """Cosine kernel in regime B2 has F = 32"""
    assert expansion_F("B2", m=2, d=1, eps=1.0, L_F=2.0, shift_invariant=True) == pytest.approx(32)

def test_expansion_F_box():
    """Box kernel in regime B4"""
    h = 0.03072
    expected = 4 * (4 + 4 / pi * math.log(1 / h))
    assert expansion_F("B4", central_masses=[4.0], tail_constants=[1 / pi], h=h) == pytest.approx(expected)

def test_expansion_F_missing_inputs():
    """Regimes refuse incomplete inputs"""
    with pytest.raises(ValueError):
        expansion_F("B2", m=2, d=1)

def test_expansion_F_unknown_regime():
    """Unknown regimes are rejected"""
    with pytest.raises(ValueError):
        expansion_F("B7", m=2)

def test_lipschitz_constant_tau_example():
    """q = 1 with unit norms, md = 2, M = 1, t = 1 gives 2 log(96 pi)"""
    assert lipschitz_constant_tau(t=1, M=1, m=2, d=1, q=1, mu_q=1, l1_norm=1) == pytest.approx(2 * math.log(96 * pi))

def test_lipschitz_constant_tau_monotone():
    """Smaller t needs a larger Lipschitz constant"""
    assert lipschitz_constant_tau(0.5, 1, 2, 1, 1, 1, 1) > lipschitz_constant_tau(1, 1, 2, 1, 1, 1, 1)

### Random Fourier expansion tests

def test_rff_pd_constants(gaussian_expansion):
    """The positive definite construction has F = 2 f0(0), B = mu = 1"""
    assert gaussian_expansion.F == pytest.approx(2)
    assert gaussian_expansion.B == 1 and gaussian_expansion.mu_a(2) == 1
    assert gaussian_expansion.n_features == 4000
    assert gaussian_expansion.coefficient_sum() == pytest.approx(2)

def test_rff_pd_cauchy_constant():
    """Cauchy expansions have F = 2^{d+1}"""
    assert rff_expand_pd(get_kernel("cauchy"), 3, 0.1, 10, 0).F == pytest.approx(4)

def test_rff_pd_deterministic(gaussian):
    """The same seed gives the same expansion"""
    a = rff_expand_pd(gaussian, 3, 0.05, 100, 5)
    b = rff_expand_pd(gaussian, 3, 0.05, 100, 5)
    np.testing.assert_array_equal(a.frequencies, b.frequencies)

def test_rff_pd_rejects_box():
    """Kernels that are not positive definite are unsupported"""
    with pytest.raises(UnsupportedKernelError):
        rff_expand_pd(get_kernel("box1"), 3, 0.1, 100, 0)

def test_rff_general_rejects_non_integrable():
    """Kernels with non-integrable transforms need mollification first"""
    with pytest.raises(UnsupportedKernelError):
        rff_expand_general(get_kernel("box1"), 3, 0.1, 100, 0)

def test_rff_general_gaussian_constant(gaussian):
    """The general construction gives F = 2^m ||f^||_1 = 4 for the Gaussian kernel"""
    expanded = rff_expand_general(gaussian, 3, 0.05, 500, 0)
    assert expanded.F == pytest.approx(4)

def test_rff_general_nonnegative_transform_single_part(gaussian):
    """A nonnegative transform only uses the positive real part"""
    expanded = rff_expand_general(gaussian, 3, 0.05, 500, 0)
    assert expanded.n_features == 2000
    assert expanded.coefficient_sum() == pytest.approx(2)

def test_grid_evaluation_matches_pointwise(gaussian_expansion):
    """The sparse grid evaluation agrees with pointwise evaluation"""
    axis = np.linspace(-3, 3, 7)[:, None]
    grid = gaussian_expansion.evaluate_grid(axis).reshape(7, 7)
    x, y = np.meshgrid(axis[:, 0], axis[:, 0], indexing="ij")
    pointwise = gaussian_expansion.evaluate(x.reshape(-1, 1), y.reshape(-1, 1)).reshape(7, 7)
    np.testing.assert_allclose(grid, pointwise, atol=1e-12)

def test_evaluate_wrong_arity(gaussian_expansion):
    """Evaluating with the wrong number of arguments fails"""
    with pytest.raises(ValueError):
        gaussian_expansion.evaluate(np.zeros((2, 1)))

### Certification tests

def test_gaussian_certification_protocol(gaussian):
    """Gaussian expansions with K = 2000 certify t = 0.05 on [-3, 3]^2 for nearly every seed"""
    passed = [verify_sup_error(gaussian, rff_expand_pd(gaussian, 3, 0.05, 2000, seed), grid_res=200, rng=seed).passed
              for seed in range(20)]
    assert sum(passed) >= 18

def test_laplacian_certification():
    """Laplacian expansions certify t = 0.1"""
    spec = get_kernel("laplacian")
    passed = [verify_sup_error(spec, rff_expand_pd(spec, 3, 0.1, 2000, seed), rng=seed).passed for seed in range(5)]
    assert sum(passed) >= 4

def test_mollified_box_certification():
    """The mollified box kernel certifies t = 0.1 on the M2 = 0.1 exclusion domain"""
    box = get_kernel("box1")
    domain = kernel_domain(box, 3.0, 0.1)
    h = choose_h_discontinuous(0.1, 1, 1.0, 0.1)
    report = verify_sup_error(box, rff_expand_general(mollify(box, h), 3.0, 0.1, 10_000, 0, domain=domain), rng=0, random_factor=1)
    assert report.passed
    assert report.grid_sup_error <= 0.1

def test_exact_trig_identity_certifies():
    """cos(x - y) written as cos x cos y + sin x sin y has no error"""
    spec = KernelSpec(name="cos_diff", order=2, dim=1, func=lambda x, y: np.cos(x[:, 0] - y[:, 0]))
    expanded = ExpandedKernel(order=2, dim=1, frequencies=np.full((2, 1), 1 / (2 * pi)), basis=("cos", "sin"),
                              index=np.array([[0, 0], [1, 1]]), weights=np.ones(2), F=2, B=1, mu=1, target_t=1e-12,
                              domain=ApproxDomain(order=2, dim=1, halfwidth=3))
    report = verify_sup_error(spec, expanded)
    assert report.grid_sup_error <= 1e-12
    assert report.passed

def test_linear_expansion_exact():
    """The coordinate expansion of x.y is exact with F = d and B = M"""
    expanded = exact_linear_expansion(3, 2.0)
    x, y = np.random.default_rng(0).uniform(-2, 2, size=(2, 10, 3))
    np.testing.assert_allclose(expanded.evaluate(x, y), np.sum(x * y, axis=1), atol=1e-12)
    assert (expanded.F, expanded.B) == (3.0, 2.0)

def test_verify_refuses_high_dimension():
    """Grid certification is refused above md = 4"""
    with pytest.raises(ValueError):
        verify_sup_error(get_kernel("spearman"), constant_expansion(3, 2, 1.0))

def test_report_consistency():
    """A report whose pass flag disagrees with its error fails"""
    with pytest.raises(ValueError):
        ExpansionReport(grid_sup_error=0.2, grid_resolution=200, K_used=10, seed=0, target_t=0.1, passed=True)

### Mollification tests

def test_mollified_box_at_center():
    """The box kernel mollified at h = 0.05 is 1 at 0 within 1e-6"""
    spec = mollify(get_kernel("box1"), 0.05)
    assert spec([0.0], [0.0]) == pytest.approx(1.0, abs=1e-6)

def test_mollify_limit():
    """Mollified values converge to the kernel at a continuity point as h shrinks"""
    hat = get_kernel("hat")
    errors = [abs(mollify(hat, h)([0.3], [0.0]) - hat([0.3], [0.0])) for h in [0.5, 0.1, 0.02]]
    assert errors[0] > errors[1] > errors[2]

def test_mollify_linear_unsupported():
    """Kernels without a product-form transform cannot be mollified"""
    with pytest.raises(UnsupportedKernelError):
        mollify(get_kernel("linear"), 0.1)

### Combinator tests

def test_budgets():
    """Error budgets of sums and products"""
    assert budget_add(0.1, [1, -1]) == pytest.approx([0.05, 0.05])
    assert budget_mul(0.1, [1, 1]) == pytest.approx([0.1 / 2.2, 0.1 / 2.2])

def test_budget_mul_small_bound():
    """Product budgets need part bounds of at least 1"""
    with pytest.raises(ValueError):
        budget_mul(0.1, [0.5])

def test_combine_add_single_part(gaussian_expansion):
    """A single part with weight 1 keeps its constants"""
    combined = combine_add([gaussian_expansion], [1.0], 0.05)
    assert (combined.F, combined.B, combined.mu) == (gaussian_expansion.F, gaussian_expansion.B, gaussian_expansion.mu)

def test_combine_add_cancellation(gaussian):
    """Adding an expansion to its negative gives 0 with a doubled F"""
    part = rff_expand_pd(gaussian, 3, 0.05, 50, 0)
    combined = combine_add([part, part], [1.0, -1.0], 0.1)
    x, y = np.random.default_rng(1).uniform(-3, 3, size=(2, 20, 1))
    np.testing.assert_allclose(combined.evaluate(x, y), 0, atol=1e-12)
    assert combined.F == pytest.approx(2 * part.F)

def test_combine_add_budget_violation(gaussian):
    """Parts above their error budget are rejected"""
    part = rff_expand_pd(gaussian, 3, 0.1, 50, 0)
    with pytest.raises(ValueError):
        combine_add([part, part], [1.0, 1.0], 0.1)

def test_combine_add_gaussian_cauchy(gaussian):
    """Half Gaussian plus half Cauchy has F = 3"""
    parts = [rff_expand_pd(gaussian, 3, 0.1, 50, 0), rff_expand_pd(get_kernel("cauchy"), 3, 0.1, 50, 1)]
    assert combine_add(parts, [0.5, 0.5], 0.1).F == pytest.approx(3)

def test_combine_mul_constant(gaussian):
    """Multiplying by the constant kernel keeps the constants and the values"""
    t = 0.1
    part = rff_expand_pd(gaussian, 3, budget_mul(t, [1, 1])[0], 50, 0)
    combined = combine_mul([part, constant_expansion(2, 1, 3.0)], [1, 1], t)
    x, y = np.random.default_rng(2).uniform(-3, 3, size=(2, 20, 1))
    np.testing.assert_allclose(combined.evaluate(x, y), part.evaluate(x, y), atol=1e-12)
    assert combined.F == pytest.approx(part.F)

@pytest.mark.parametrize("mode", ["sum", "product"])
def test_materialize_matches_lazy(gaussian, mode):
    """Flattened composites evaluate like their lazy form with the same coefficient sum"""
    if mode == "sum":
        parts = [rff_expand_pd(gaussian, 3, 0.05, 5, 0), rff_expand_pd(gaussian, 3, 0.05, 5, 1)]
        composite = combine_add(parts, [1.0, -0.5], 0.075)
    else:
        budget = budget_mul(0.1, [1, 1])[0]
        parts = [rff_expand_pd(gaussian, 3, budget, 3, 0), rff_expand_pd(gaussian, 3, budget, 3, 1)]
        composite = combine_mul(parts, [1, 1], 0.1, args=[(0, 1), (1, 2)])
    flat = composite.materialize()
    args = np.random.default_rng(3).uniform(-3, 3, size=(composite.order, 15, 1))
    np.testing.assert_allclose(flat.evaluate(*args), composite.evaluate(*args), atol=1e-10)
    assert flat.coefficient_sum() == pytest.approx(composite.coefficient_sum())

def test_embed_acts_on_coordinate(gaussian_expansion):
    """An embedded expansion only sees its target coordinate"""
    embedded = gaussian_expansion.embed(2, [1])
    x, y = np.random.default_rng(4).uniform(-3, 3, size=(2, 10, 2))
    np.testing.assert_allclose(embedded.evaluate(x, y), gaussian_expansion.evaluate(x[:, [1]], y[:, [1]]), atol=1e-12)

def test_json_serialization(gaussian):
    """A decoded expansion evaluates exactly like the original"""
    expanded = rff_expand_pd(gaussian, 3, 0.05, 20, 7)
    decoded = from_json(to_json(expanded))
    x, y = np.random.default_rng(5).uniform(-3, 3, size=(2, 10, 1))
    np.testing.assert_array_equal(decoded.evaluate(x, y), expanded.evaluate(x, y))
    assert decoded.seed == 7

### Rank kernel tests

def spearman_F_closed_form(M1, M2, t):
    """16 l1^2 where l1 = (gamma + log(2 M1^2 / h^2)) / pi is the L1 norm of the mollified truncated sign transform"""
    h = choose_h_discontinuous(M2, 1, 1.0, budget_mul(t, [1, 1])[0])
    l1 = (np.euler_gamma + math.log(2 * M1 ** 2 / h ** 2)) / pi
    return 16 * l1 ** 2

@pytest.mark.parametrize("M1, M2, t", [(2.0, 0.1, 0.1), (4.0, 0.1, 0.1), (8.0, 0.1, 0.1), (2.0, 0.2, 0.1), (2.0, 0.1, 0.025)])
def test_spearman_F_closed_form(M1, M2, t):
    """The coefficient sum is the product of the two sign factor sums"""
    assert spearman_expansion(1.0, M1, M2, t, 20, 0).F == pytest.approx(spearman_F_closed_form(M1, M2, t), rel=0.03)

def test_spearman_F_grows_with_M1():
    """Each doubling of M1 adds 8 log(2) / pi to sqrt(F)"""
    Fs = [spearman_expansion(1.0, M1, 0.1, 0.1, 20, 0).F for M1 in [2.0, 4.0, 8.0]]
    assert Fs[0] < Fs[1] < Fs[2]
    assert np.diff(np.sqrt(Fs)) == pytest.approx([8 * math.log(2) / pi] * 2, rel=0.1)

def test_spearman_F_grows_as_M2_shrinks():
    """Narrower jump bands force a smaller bandwidth and a larger F"""
    Fs = [spearman_expansion(1.0, 2.0, M2, 0.1, 20, 0).F for M2 in [0.4, 0.2, 0.1]]
    assert Fs[0] < Fs[1] < Fs[2]
    assert np.diff(np.sqrt(Fs)) == pytest.approx([8 * math.log(2) / pi] * 2, rel=0.1)

def test_spearman_F_grows_as_t_shrinks():
    """F grows slowly in 1/t, through the bandwidth only"""
    ts = [0.4, 0.1, 0.025, 0.00625]
    Fs = [spearman_expansion(1.0, 2.0, 0.1, t, 20, 0).F for t in ts]
    assert all(a < b for a, b in zip(Fs, Fs[1:]))
    assert Fs[-1] < 2 * Fs[0]

def test_spearman_structure():
    """The Spearman expansion is the symmetrized product of two sign expansions on separate coordinates"""
    parts = spearman_parts(1.0, 2.0, 0.1, 0.1, 20, 0)
    expanded = spearman_from_parts(parts, 0.1, seed=0)
    assert (expanded.order, expanded.dim, expanded.combinator) == (3, 2, "product")
    assert expanded.symmetrized
    assert expanded.part_args == ((0, 1), (0, 2))
    assert expanded.F == pytest.approx(parts[0][1].F * parts[1][1].F)
    assert all(not part.symmetrized and part.target_t <= 0.1 / 2.2 + 1e-12 for _, part in parts)

def test_spearman_wrong_part_count():
    """Exactly two sign factors are accepted"""
    parts = spearman_parts(1.0, 2.0, 0.1, 0.1, 20, 0)
    with pytest.raises(ValueError):
        spearman_from_parts(parts[:1], 0.1)

def test_sign_expansion_box_beyond_truncation():
    """The box must sit inside the truncation level"""
    with pytest.raises(ValueError):
        sign_expansion(3.0, 2.0, 0.1, 0.1, 20, 0)

def test_mollified_sign_is_antisymmetric():
    """Mollification keeps the antisymmetry of the sign kernel"""
    spec = mollify(sign_kernel(2.0), 0.05)
    assert not spec.has(KernelTags.SYMMETRIC)
    x = np.array([[0.3], [-0.5]])
    y = np.array([[0.1], [0.5]])
    np.testing.assert_allclose(spec.func(x, y), -spec.func(y, x), atol=1e-10)

def test_sign_expansion_certifies():
    """The unsymmetrized sign expansion is within t off the jump band"""
    spec, expanded, _ = sign_expansion(1.0, 1.0, 0.2, 0.2, 8000, 0)
    assert not expanded.symmetrized
    report = verify_sup_error(spec, expanded, grid_res=100, rng=0, random_factor=2)
    assert report.passed

def test_product_error_bound():
    """(1 + e1)(1 + e2) - 1 for unit bounds"""
    assert product_error_bound([0.1, 0.2], [1, 1]) == pytest.approx(0.32)
    assert product_error_bound([0.1], [2]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        product_error_bound([0.1, 0.2], [1])

def test_product_of_certified_parts_certifies_on_grid():
    """sign(x - y) sign(x - z) built from two certified sign expansions is within t on the intersected domain"""
    t = 0.5
    parts = [sign_expansion(1.0, 1.0, 0.2, budget, 4000, seed) for seed, budget in enumerate(budget_mul(t, [1, 1]))]
    for spec, part, _ in parts:
        assert verify_sup_error(spec, part, grid_res=100, rng=0, random_factor=2).passed
    product = combine_mul([part for _, part, _ in parts], [1, 1], t, args=[(0, 1), (0, 2)])
    target = symmetrize(KernelSpec(name="sign_product", order=3, dim=1,
                                   func=lambda x, y, z: np.sign(x[:, 0] - y[:, 0]) * np.sign(x[:, 0] - z[:, 0])))
    report = verify_sup_error(target, product, grid_res=40, rng=0, random_factor=5)
    assert report.grid_resolution == 40
    assert report.grid_sup_error <= t
    assert report.passed

def test_product_excludes_any_jump_band():
    """The intersected domain drops tuples with any pair of arguments inside a band"""
    t = 0.5
    parts = [sign_expansion(1.0, 1.0, 0.2, budget, 20, seed)[1] for seed, budget in enumerate(budget_mul(t, [1, 1]))]
    product = combine_mul(parts, [1, 1], t, args=[(0, 1), (0, 2)])
    tuples = np.array([[[0.0], [0.5], [-0.5]], [[0.0], [0.5], [0.55]], [[0.0], [0.05], [-0.5]]])
    np.testing.assert_array_equal(product.domain.contains(tuples), [True, False, False])

def test_composite_grid_evaluation_matches_pointwise():
    """The tensor evaluation of a symmetrized order-3 product agrees with pointwise evaluation"""
    t = 0.5
    parts = [sign_expansion(1.0, 1.0, 0.2, budget, 30, seed)[1] for seed, budget in enumerate(budget_mul(t, [1, 1]))]
    product = combine_mul(parts, [1, 1], t, args=[(0, 1), (0, 2)])
    axis = np.linspace(-1, 1, 6)[:, None]
    x, y, z = (a.ravel()[:, None] for a in np.meshgrid(axis[:, 0], axis[:, 0], axis[:, 0], indexing="ij"))
    np.testing.assert_allclose(product.evaluate_grid(axis), product.evaluate(x, y, z), atol=1e-10)

def test_spearman_certified_through_factors():
    """The Spearman certificate is the product bound of its factor certificates"""
    t = 0.5
    parts = spearman_parts(1.0, 1.0, 0.2, t, 4000, 0)
    expanded = spearman_from_parts(parts, t, seed=0)
    report = verify_product(parts, expanded, [1, 1], grid_res=100, rng=1, random_factor=2)
    assert report.passed
    assert report.K_used == expanded.n_features
    assert report.grid_sup_error <= product_error_bound([p.target_t for _, p in parts], [1, 1]) + 1e-12

def test_spearman_within_t_on_domain():
    """The Spearman expansion is within t of the symmetrized kernel at random in-domain triples"""
    t = 0.5
    expanded = spearman_expansion(1.0, 1.0, 0.2, t, 4000, 0)
    points = expanded.domain.sample(np.random.default_rng(6), 300)
    assert len(points) > 0
    exact = get_kernel("spearman", M1=1.0).func(*[points[:, k, :] for k in range(3)])
    approx = expanded.evaluate(*[points[:, k, :] for k in range(3)])
    assert np.max(np.abs(exact - approx)) <= t

def test_verify_product_rejects_sum(gaussian):
    """Only product composites are certified through their factors"""
    parts = [rff_expand_pd(gaussian, 3, 0.05, 5, 0), rff_expand_pd(gaussian, 3, 0.05, 5, 1)]
    composite = combine_add(parts, [1.0, 1.0], 0.1)
    with pytest.raises(ValueError):
        verify_product([(gaussian, p) for p in parts], composite, [1, 1])
