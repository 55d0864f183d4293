from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("mixvstat")
except PackageNotFoundError:
    __version__ = "0.0.0"

from .bounds import (MixingModel, TailBound, TailBoundInputs, bern_seq, gumbel_cdf, gumbel_quantile, mdp_condition_check,
                     sigma_sq_alpha, sigma_sq_tau, tail_bound_degenerate, tail_bound_discontinuous, tail_bound_general)
from .errors import ConfigError, DomainError, ResolutionError, UnsupportedKernelError
from .expansion import (ExpandedKernel, ExpansionReport, choose_h_discontinuous, choose_h_lipschitz, combine_add, combine_mul,
                        exact_linear_expansion, expansion_F, gamma_constants, lipschitz_constant_tau, mollify, rff_expand_general,
                        rff_expand_pd, sample_size_heuristic, spearman_expansion, verify_product, verify_sup_error)
from .independence import (PairStat, TestResult, kendall_projection, max_test, mdp_ratio_probe, pair_statistics,
                           sigma2_kendall_ar1, sigma2_plugin, size_power_study)
from .kernels import (ApproxDomain, CatalogEntry, KernelSpec, SpectralDensity, builtin_catalog, eval_kernel, get_kernel, in_domain,
                      spectral_density, symmetrize)
from .plr import PLRConfig, PLRFit, default_tuning, fit_plr, plr_objective, rate_experiment
from .processes import AR1Config, PLRData, ProcessSample, simulate_ar1, simulate_bivariate_pairs, simulate_plr
from .replication import derive_seed, make_rng, ordered_map
from .vstat import (bias_constants, degeneracy_level, hoeffding_components, hoeffding_project, kendall_tau_fast, nu_squared,
                    spearman_rho, u_statistic, v_statistic)
