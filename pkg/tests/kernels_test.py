import math
import numpy as np
from numpy import pi
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from mixvstat.errors import UnsupportedKernelError
from mixvstat.kernels import (ApproxDomain, KernelSpec, KernelTags, box_factor, builtin_catalog, eval_kernel, fourier_oracle,
                              gaussian_factor, gaussian_kernel, get_kernel, gram_min_eigenvalue, hat_factor, in_domain,
                              kernel_domain, laplacian_factor, spearman_base_kernel, spectral_density, symmetrize,
                              truncated_sign_factor)

### Kernel evaluation tests

def test_gaussian_kernel_values():
    """The Gaussian kernel is exp(-|x - y|^2 / 2)"""
    spec = gaussian_kernel(2)
    assert eval_kernel(spec, [0, 0], [0, 0]) == pytest.approx(1.0)
    assert eval_kernel(spec, [1, 0], [0, 1]) == pytest.approx(math.exp(-1))

def test_eval_kernel_wrong_arity():
    """Evaluating with the wrong number of points fails"""
    with pytest.raises(ValueError):
        eval_kernel(gaussian_kernel(1), [0.0])

def test_eval_kernel_wrong_dimension():
    """Evaluating with points of the wrong dimension fails"""
    with pytest.raises(ValueError):
        eval_kernel(gaussian_kernel(1), [0.0, 1.0], [0.0, 1.0])

@pytest.mark.parametrize("kernel_id", ["gaussian", "laplacian", "cauchy", "hat", "cosine", "box1", "kendall", "spearman", "linear"])
def test_get_kernel_catalog_ids(kernel_id):
    """Every catalog id builds a kernel"""
    spec = get_kernel(kernel_id)
    assert spec.order in (2, 3)

def test_get_kernel_unknown():
    """Unknown kernel ids are unsupported"""
    with pytest.raises(UnsupportedKernelError):
        get_kernel("epanechnikov")

def test_kendall_kernel_values():
    """The Kendall kernel multiplies the signs of coordinate differences"""
    spec = get_kernel("kendall")
    assert eval_kernel(spec, [0, 0], [1, 1]) == 1
    assert eval_kernel(spec, [0, 1], [1, 0]) == -1
    assert eval_kernel(spec, [0, 0], [0, 1]) == 0

def test_symmetrize_spearman():
    """The symmetrized Spearman kernel is invariant under argument permutations"""
    spec = symmetrize(spearman_base_kernel())
    rng = np.random.default_rng(0)
    x, y, z = rng.standard_normal((3, 2))
    assert spec(x, y, z) == pytest.approx(spec(z, x, y))
    assert spec(x, y, z) == pytest.approx(spec(y, x, z))
    assert spec.has(KernelTags.SYMMETRIC)

def test_shift_invariant_order_three():
    """Shift-invariant kernels must have order 2"""
    with pytest.raises(ValueError):
        KernelSpec(name="bad", order=3, dim=1, func=lambda *a: 0, tags={KernelTags.SHIFT_INVARIANT.value})

def test_unknown_tag():
    """Kernels with unknown tags fail"""
    with pytest.raises(ValueError):
        KernelSpec(name="bad", order=2, dim=1, func=lambda *a: 0, tags={"smooth"})

### Spectral tests

@pytest.mark.parametrize("kernel_id", ["gaussian", "laplacian", "cauchy", "hat", "cosine", "kendall"])
def test_closed_form_transforms_match_oracle(kernel_id):
    """Closed-form factor transforms agree with oscillatory quadrature"""
    spectral_density(get_kernel(kernel_id), validate=True)

@pytest.mark.parametrize("factor_params", [
    {"factor": gaussian_factor(), "u": 0.2, "expected": math.sqrt(2 * pi) * math.exp(-2 * pi ** 2 * 0.04)},
    {"factor": laplacian_factor(), "u": 0.3, "expected": 2 / (1 + 4 * pi ** 2 * 0.09)},
    {"factor": hat_factor(), "u": 0.3, "expected": np.sinc(0.3) ** 2},
])
def test_fourier_oracle_values(factor_params):
    """The quadrature oracle reproduces known transforms"""
    value = fourier_oracle(factor_params["factor"], factor_params["u"])[0]
    assert value.real == pytest.approx(factor_params["expected"], rel=1e-6)
    assert abs(value.imag) < 1e-9

def test_spectral_density_missing():
    """Kernels without a transform are unsupported"""
    with pytest.raises(UnsupportedKernelError):
        spectral_density(get_kernel("linear"))

def test_gaussian_masses():
    """The Gaussian transform is a positive density of mass f0(0) = 1"""
    spectral = get_kernel("gaussian").spectral
    assert spectral.real_pos_mass == pytest.approx(1.0)
    assert spectral.real_neg_mass == spectral.imag_pos_mass == spectral.imag_neg_mass == 0

def test_kendall_transform_real_with_infinite_mass():
    """Two odd factors give a real transform whose L1 norm is infinite before mollification"""
    spectral = get_kernel("kendall").spectral
    assert spectral.imag_pos_mass == spectral.imag_neg_mass == 0
    assert math.isinf(spectral.l1_norm)
    assert not spectral.sampleable

def test_gaussian_sampler_moments():
    """Gaussian frequencies have standard deviation 1 / (2 pi)"""
    u = get_kernel("gaussian").spectral.sample(np.random.default_rng(1), "real_pos", 200_000)
    assert u.shape == (200_000, 1)
    assert np.std(u) == pytest.approx(1 / (2 * pi), rel=0.01)

def test_sample_zero_mass_part():
    """Sign parts without mass cannot be sampled"""
    with pytest.raises(ValueError):
        get_kernel("gaussian").spectral.sample(np.random.default_rng(1), "real_neg", 10)

### Smoothing tests

def test_gaussian_smoothing_adds_variances():
    """Smoothing the Gaussian factor at 0 gives 1 / sqrt(1 + h^2)"""
    assert gaussian_factor().smoothed(np.array([0.0]), 0.5)[0] == pytest.approx(1 / math.sqrt(1.25))

def test_box_smoothing_closed_form():
    """The smoothed box is Phi((1 - x) / h) - Phi((-1 - x) / h)"""
    x = np.array([0.0, 0.9, 1.5])
    h = 0.2
    np.testing.assert_allclose(box_factor().smoothed(x, h), norm.cdf((1 - x) / h) - norm.cdf((-1 - x) / h), atol=1e-12)

def test_laplacian_smoothing_matches_quadrature():
    """The closed-form smoothing of the Laplacian factor matches adaptive quadrature"""
    factor = laplacian_factor()
    x = np.linspace(-2, 2, 9)
    reference = [quad(lambda y: math.exp(-abs(y)) * norm.pdf(x0 - y, scale=0.3), x0 - 4, x0 + 4, points=[0.0])[0] for x0 in x]
    np.testing.assert_allclose(factor.smoothed(x, 0.3), reference, atol=1e-8)

def test_mollified_sign_is_sampleable():
    """Mollification makes the truncated sign transform integrable"""
    mollified = truncated_sign_factor(2.0).mollified(0.1)
    assert mollified.integrable
    assert math.isfinite(mollified.l1_norm)
    assert mollified.sample_abs(np.random.default_rng(0), 100).shape == (100,)

def test_mollify_negative_bandwidth():
    """Mollification needs a positive bandwidth"""
    with pytest.raises(ValueError):
        box_factor().mollified(0.0)

### Positive definiteness tests

def test_gaussian_gram_positive():
    """Gram matrices of the Gaussian kernel are positive semi-definite"""
    points = np.random.default_rng(2).uniform(-3, 3, size=(40, 1))
    assert gram_min_eigenvalue(get_kernel("gaussian"), points) > -1e-10

def test_box_gram_indefinite():
    """The box kernel is not positive definite"""
    assert gram_min_eigenvalue(get_kernel("box1"), np.array([[0.0], [0.9], [1.8]])) == pytest.approx(1 - math.sqrt(2))

### Domain tests

def test_domain_box_membership():
    """Tuples leave the domain when a coordinate leaves the box"""
    domain = ApproxDomain(order=2, dim=1, halfwidth=1.0)
    assert in_domain(domain, [0.5], [-0.5])
    assert not in_domain(domain, [1.5], [0.0])

def test_domain_jump_bands():
    """Tuples whose differences fall near a jump point are excluded, symmetrically in the arguments"""
    domain = kernel_domain(get_kernel("box1"), 3.0, 0.1)
    assert not in_domain(domain, [1.05], [0.0])
    assert not in_domain(domain, [0.0], [1.05])
    assert in_domain(domain, [1.2], [0.0])

def test_domain_bands_coalesce():
    """Overlapping exclusion bands are merged"""
    domain = ApproxDomain(order=2, dim=1, halfwidth=1.0, margin=0.5, jumps=((-0.25, 0.25),))
    assert domain.bands == (((-0.75, 0.75),),)

def test_domain_serialization():
    """Domains survive a dictionary round trip"""
    domain = kernel_domain(get_kernel("kendall"), 5.0, 0.1)
    assert ApproxDomain.from_dict(domain.to_dict()) == domain

def test_domain_sample_inside():
    """Sampled tuples belong to the domain"""
    domain = kernel_domain(get_kernel("box1"), 2.0, 0.2)
    points = domain.sample(np.random.default_rng(3), 500)
    assert points.shape == (500, 2, 1)
    assert domain.contains(points).all()

@pytest.mark.parametrize("domain_params", [
    {"order": 0, "dim": 1, "halfwidth": 1.0},
    {"order": 2, "dim": 1, "halfwidth": -1.0},
    {"order": 2, "dim": 1, "halfwidth": 1.0, "margin": -0.1},
])
def test_domain_invalid(domain_params):
    """Domains with non-positive order, box or negative margin fail"""
    with pytest.raises(ValueError):
        ApproxDomain(**domain_params)

### Catalog tests

@pytest.mark.parametrize("d", [1, 2, 3])
def test_catalog_parameter_free_rows(d):
    """Gaussian 2, Laplacian 2, Cauchy 2^{d+1}, Hat 2 and Cosine 32, all with B = mu = 1"""
    entries = {e.kernel_id: e for e in builtin_catalog(d=d)}
    expected = {"gaussian": 2.0, "laplacian": 2.0, "cauchy": 2.0 ** (d + 1), "hat": 2.0, "cosine": 32.0}
    for kernel_id, F in expected.items():
        assert entries[kernel_id].F == pytest.approx(F, rel=1e-12)
        assert entries[kernel_id].B == 1.0
        assert entries[kernel_id].mu == 1.0

def test_catalog_linear_row():
    """The linear kernel has F = d, B = M and a data-dependent mu"""
    entry = {e.kernel_id: e for e in builtin_catalog(d=3, M=2.0)}["linear"]
    assert (entry.F, entry.B, entry.mu) == (3.0, 2.0, None)

def test_catalog_discontinuous_rows_finite():
    """Discontinuous rows carry finite constants"""
    entries = {e.kernel_id: e for e in builtin_catalog()}
    for kernel_id in ["box1", "kendall", "spearman"]:
        assert math.isfinite(entries[kernel_id].F) and entries[kernel_id].F > 0
