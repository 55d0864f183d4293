"""Command-line front end

    mixvstat <subcommand> [config.toml] [--seed S] [--threads N] [--out DIR] [-v] [--key value ...]

Every subcommand writes a JSON manifest plus CSV results under <out>/<subcommand>/.
Exit codes: 0 success, 2 invalid configuration or arguments, 3 non-converged or
inconclusive results.
"""
import argparse
from dataclasses import asdict
import logging
import math
import numpy as np
from pathlib import Path
import sys
from typing import Dict, List, Optional, Sequence

from mixvstat.bounds import (MixingKinds, MixingModel, TailBoundInputs, empirical_tail, mdp_condition_check, normal_sf,
                             tail_bound_degenerate, tail_bound_general)
from mixvstat.config import (ExperimentConfig, SimulationKinds, TailBoundKinds, block_name, load_config, parse_overrides)
from mixvstat.errors import ResolutionError
from mixvstat.expansion import (exact_linear_expansion, mollify, choose_h_discontinuous, rff_expand_general, rff_expand_pd,
                                spearman_from_parts, spearman_parts, verify_product, verify_sup_error)
from mixvstat.independence import (Sigma2Methods, max_test, mdp_ratio_probe, pair_statistics, sigma2_kendall_ar1,
                                   sigma2_kendall_closed_form, sigma2_plugin, size_power_study)
from mixvstat.kernels import KernelTags, builtin_catalog, get_kernel, kernel_domain
from mixvstat.plr import PLRConfig, default_tuning, fit_plr, rate_experiment
from mixvstat.processes import AR1Config, PLRData, simulate_ar1, simulate_bivariate_pairs, simulate_plr, stationary_sampler
from mixvstat.replication import derive_seed, make_rng, ordered_map
from mixvstat.reports import column_schema, manifest, write_csv, write_json
from mixvstat.vstat import bias_constants, residual_probability, v_statistic

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INCONCLUSIVE = 3


class Run:
    """Output location and bookkeeping of one subcommand run"""

    def __init__(self, command: str, config: ExperimentConfig):
        self.command = command
        self.config = config
        self.block = config.block(command)
        self.seed = config.master_seed
        self.out = Path(config.output_dir) / command
        self.outputs: Dict[str, List[Dict[str, str]]] = {}

    def csv(self, name: str, columns: Sequence[str], rows) -> Path:
        self.outputs[name] = column_schema(name, columns)
        return write_csv(self.out / name, columns, rows)

    def finish(self, results: Dict, exit_code: int = EXIT_OK) -> int:
        # threads, progress and output_dir are not recorded
        inputs = {block_name(self.command): asdict(self.block), "master_seed": self.seed}
        write_json(self.out / "manifest.json", manifest(self.command, inputs, self.seed, self.outputs, results, exit_code))
        logger.info(f"{self.command} finished with exit code {exit_code}, artifacts in {self.out}")
        return exit_code


### Subcommands

def run_constants(run: Run) -> int:
    cfg = run.block
    entries = builtin_catalog(d=cfg.d, M=cfg.M, M1=cfg.M1, M2=cfg.M2, t=cfg.t)
    columns = ["kernel", "F", "B", "mu", "regime"]
    rows = [[e.kernel_id, e.F, e.B, e.mu_label if e.mu is None else e.mu, e.regime] for e in entries]
    print(f"{'kernel':<10} {'F':>14} {'B':>8} {'mu_a':>12}  regime")
    for kernel_id, F, B, mu, regime in rows:
        print(f"{kernel_id:<10} {F:>14.6g} {B:>8.4g} {str(mu):>12}  {regime}")
    run.csv("constants.csv", columns, rows)
    return run.finish({"kernels": [e.kernel_id for e in entries]})


def _expansion_for(cfg, seed: int):
    """Returns the kernel, its expansion, the pre-smoothing bandwidth (or None) and the factors of a product (or None)"""
    spec = get_kernel(cfg.kernel, d=cfg.d, M1=cfg.M1)
    if cfg.kernel == "linear":
        return spec, exact_linear_expansion(spec.dim, cfg.M), None, None
    if cfg.kernel == "spearman":
        parts = spearman_parts(cfg.M, cfg.M1, cfg.M2, cfg.t, cfg.K, seed, h=cfg.h)
        h = cfg.h if cfg.h is not None else choose_h_discontinuous(cfg.M2, 1, 1.0, parts[0][1].target_t)
        return spec, spearman_from_parts(parts, cfg.t, seed=seed), h, parts
    if cfg.M2 is not None:
        domain = kernel_domain(spec, cfg.M, cfg.M2)
        h = cfg.h if cfg.h is not None else choose_h_discontinuous(cfg.M2, spec.dim, 1.0, cfg.t)
        return spec, rff_expand_general(mollify(spec, h), cfg.M, cfg.t, cfg.K, seed, domain=domain), h, None
    if cfg.h is not None:
        return spec, rff_expand_general(mollify(spec, cfg.h), cfg.M, cfg.t, cfg.K, seed), cfg.h, None
    spectral = spec.spectral
    if spec.has(KernelTags.POSITIVE_DEFINITE) and spectral is not None and spectral.real_neg_mass == 0 \
            and spectral.imag_pos_mass == 0 and spectral.imag_neg_mass == 0:
        return spec, rff_expand_pd(spec, cfg.M, cfg.t, cfg.K, seed), None, None
    return spec, rff_expand_general(spec, cfg.M, cfg.t, cfg.K, seed), None, None


def run_expand_verify(run: Run) -> int:
    cfg = run.block

    def certify(k):
        seed = derive_seed(run.seed, k)
        spec, expanded, h, parts = _expansion_for(cfg, seed)
        rng = derive_seed(run.seed, k, 1)
        if parts is not None:
            return k, seed, h, verify_product(parts, expanded, [1.0] * len(parts), grid_res=cfg.grid_res, rng=rng)
        return k, seed, h, verify_sup_error(spec, expanded, grid_res=cfg.grid_res, rng=rng)

    reports = ordered_map(certify, range(cfg.seeds), threads=run.config.threads, desc="expand-verify",
                          progress=run.config.progress)
    columns = ["seed_index", "seed", "h", "grid_resolution", "K_used", "grid_sup_error", "random_sup_error", "target_t", "passed"]
    run.csv("certificates.csv", columns, [[k, seed, h, r.grid_resolution, r.K_used, r.grid_sup_error, r.random_sup_error,
                                           r.target_t, r.passed] for k, seed, h, r in reports])
    pass_rate = sum(r.passed for _, _, _, r in reports) / len(reports)
    logger.info(f"Kernel {cfg.kernel}: {pass_rate:.2%} of {len(reports)} expansions within t={cfg.t}")
    if pass_rate < cfg.min_pass_rate:
        logger.warning(f"Pass rate {pass_rate:.2%} below the required {cfg.min_pass_rate:.2%}")
    return run.finish({"pass_rate": pass_rate, "max_sup_error": max(r.grid_sup_error for _, _, _, r in reports)})


def run_tail_bound(run: Run) -> int:
    cfg = run.block
    process = AR1Config(coeffs=(cfg.coeff,))
    spec = get_kernel("gaussian", d=cfg.d)
    variance = 1 / (1 - cfg.coeff ** 2)
    # E exp(-|X - Y|^2 / 2) for independent N(0, v I_d) points
    theta = (1 + 2 * variance) ** (-cfg.d / 2)
    expanded = rff_expand_pd(spec, cfg.M, cfg.t, cfg.K, derive_seed(run.seed, 0))
    gamma2 = cfg.gamma2 if cfg.gamma2 is not None else -math.log(abs(cfg.coeff))
    model = MixingModel(MixingKinds.ALPHA.value, cfg.gamma1, gamma2, cfg.delta)
    sigma2 = model.sigma_sq(expanded.mu)
    results = {"theta": theta, "sigma2": sigma2, "F": expanded.F, "B": expanded.B}
    if cfg.bound == TailBoundKinds.GENERAL.value:
        bias = bias_constants(spec, expanded, stationary_sampler(process, cfg.d), expanded.domain, cfg.mc_budget,
                              make_rng(run.seed, 1), C_const=cfg.C_const, n_anchors=cfg.n_anchors)
        tails = [2 * normal_sf(cfg.M / sd) for sd in process.stationary_sd(cfg.d)]
        residual = residual_probability(cfg.n, tails)
        inputs = TailBoundInputs(F=expanded.F, B=expanded.B, mu1=expanded.mu, mu_2_delta=expanded.mu, sigma2=sigma2, n=cfg.n,
                                 m=2, C1=cfg.C1, C2=cfg.C2, t=cfg.t, t_prime=bias.t_prime, residual=residual)
        bounds = [tail_bound_general(inputs, x) for x in cfg.x_grid]
        results.update({"t_prime": bias.t_prime, "t_prime_best_effort": bias.best_effort, "residual": residual})
    else:
        inputs = TailBoundInputs(F=expanded.F, B=expanded.B, mu1=expanded.mu, mu_2_delta=expanded.mu, sigma2=sigma2, n=cfg.n,
                                 m=2, C1=cfg.C1, C2=cfg.C2, t=cfg.t)
        bounds = [tail_bound_degenerate(inputs, x) for x in cfg.x_grid]
    diagnostics = mdp_condition_check(expanded.F, expanded.B, expanded.mu, sigma2, cfg.n, 2)
    results.update({"mdp_ratio1": diagnostics.ratio1, "mdp_ratio2": diagnostics.ratio2})

    def deviation(k):
        sample = simulate_ar1(process, cfg.n, derive_seed(run.seed, 2, k), d=cfg.d)
        return v_statistic(spec, sample.data) - theta

    deviations = np.array(ordered_map(deviation, range(cfg.reps), threads=run.config.threads, desc="tail-bound",
                                      progress=run.config.progress))
    empirical = empirical_tail(deviations, [b.threshold for b in bounds])
    columns = ["x", "threshold", "bound", "vacuous", "empirical_tail", "dominates"]
    rows = [[x, b.threshold, b.value, b.vacuous, e, b.value >= e] for x, b, e in zip(cfg.x_grid, bounds, empirical)]
    run.csv("tail_bound.csv", columns, rows)
    results["dominates_everywhere"] = all(row[-1] for row in rows)
    if not results["dominates_everywhere"]:
        logger.warning("The bound falls below the empirical tail at some thresholds; consider a larger C1 or a smaller C2")
    return run.finish(results)


def run_simulate(run: Run) -> int:
    cfg = run.block
    process = cfg.process.to_ar1()
    if cfg.kind == SimulationKinds.AR1.value:
        sample = simulate_ar1(process, cfg.n, run.seed, d=cfg.d)
        run.csv("samples.csv", sample.columns(), sample.data.tolist())
    elif cfg.kind == SimulationKinds.PAIRS.value:
        samples = simulate_bivariate_pairs(cfg.p, process, cfg.n, run.seed, correlations=[cfg.correlation] * cfg.p)
        rows = [[s.stream[-1], i, float(x), float(y)] for s in samples for i, (x, y) in enumerate(s.data)]
        run.csv("pairs.csv", ["pair_id", "index", "x", "y"], rows)
    else:
        data = simulate_plr(cfg.n, cfg.p, cfg.s, run.seed, design=process)
        run.csv("data.csv", data.columns(), np.column_stack([data.Y, data.W, data.X]).tolist())
        run.csv("beta_star.csv", ["k", "beta_star"], [[k, b] for k, b in enumerate(data.beta_star)])
    return run.finish({"kind": cfg.kind})


def _sigma2_values(cfg, process: AR1Config, samples, seed: int):
    if cfg.sigma2_method == Sigma2Methods.GIVEN.value:
        return [cfg.sigma2] * cfg.p
    if cfg.sigma2_method == Sigma2Methods.PLUGIN.value:
        return [sigma2_plugin(s.data, cfg.lag_cap).value for s in samples]
    rho1, rho2 = (float(r) for r in process.for_dim(2))
    estimate = sigma2_kendall_ar1(rho1, rho2, method=cfg.sigma2_method, budget=cfg.mc_budget, rng=make_rng(seed, 1))
    return [estimate.value] * cfg.p


def run_indep_test(run: Run) -> int:
    cfg = run.block
    process = cfg.process.to_ar1()
    if cfg.reps > 1:
        sigma2 = _sigma2_values(cfg, process, [], run.seed)[0]
        study = size_power_study(cfg.p, cfg.n, cfg.reps, cfg.alpha, run.seed, config=process, alt_correlation=cfg.alt_correlation,
                                 sigma2=sigma2, threads=run.config.threads, progress=run.config.progress)
        power = study.power_decisions or [None] * cfg.reps
        run.csv("decisions.csv", ["rep", "null_reject", "alt_reject"],
                [[k, a, b] for k, (a, b) in enumerate(zip(study.size_decisions, power))])
        return run.finish({"empirical_size": study.empirical_size, "size_ci": study.size_ci, "empirical_power": study.empirical_power,
                           "power_ci": study.power_ci, "sigma2": sigma2})
    samples = simulate_bivariate_pairs(cfg.p, process, cfg.n, run.seed, correlations=[cfg.correlation] * cfg.p)
    sigma2 = _sigma2_values(cfg, process, samples, run.seed)
    stats = pair_statistics(samples, sigma2, sigma2_method=cfg.sigma2_method, threads=run.config.threads)
    result = max_test(stats, cfg.alpha)
    run.csv("pairs.csv", ["pair_id", "u_stat", "sigma2", "u_tilde"], [[s.pair_id, s.u_stat, s.sigma2, s.u_tilde] for s in stats])
    logger.info(f"Statistic {result.statistic:.4f} against threshold {result.q_alpha:.4f}: {'reject' if result.reject else 'accept'}")
    return run.finish({"S_n": result.S_n, "p_count": result.p_count, "alpha": result.alpha, "q_alpha": result.q_alpha,
                       "statistic": result.statistic, "reject": result.reject,
                       "sigma2_approximate": cfg.sigma2_method == Sigma2Methods.PLUGIN.value})


def run_mdp_probe(run: Run) -> int:
    cfg = run.block
    process = cfg.process.to_ar1()
    if cfg.nu is not None:
        nu = cfg.nu
    else:
        rho1, rho2 = (float(r) for r in process.for_dim(2))
        nu = math.sqrt(sigma2_kendall_closed_form(rho1, rho2))
    rows = mdp_ratio_probe(process, nu, cfg.x_grid, cfg.reps, cfg.n, run.seed, threads=run.config.threads,
                           progress=run.config.progress)
    run.csv("mdp_probe.csv", ["x", "empirical_tail", "normal_tail", "ratio", "se"],
            [[r.x, r.empirical_tail, r.normal_tail, r.ratio, r.se] for r in rows])
    return run.finish({"nu": nu})


def run_plr_fit(run: Run) -> int:
    cfg = run.block
    data = PLRData.from_csv(cfg.data) if cfg.data is not None else simulate_plr(cfg.n, cfg.p, cfg.s, run.seed)
    h_n, lambda_n = default_tuning(data.n, data.p, cfg.c_h, cfg.c_lambda, cfg.h_max)
    config = PLRConfig(h_n=cfg.h_n if cfg.h_n is not None else h_n, lambda_n=cfg.lambda_n if cfg.lambda_n is not None else lambda_n,
                       optimizer=cfg.optimizer, tol=cfg.tol, max_iter=cfg.max_iter)
    fit = fit_plr(data, config)
    run.csv("beta.csv", ["k", "beta_hat", "beta_star"], [[k, b, s] for k, (b, s) in enumerate(zip(fit.beta_hat, data.beta_star))])
    run.csv("objective.csv", ["iteration", "objective"], list(enumerate(fit.objective_trace)))
    results = {"h_n": config.h_n, "lambda_n": config.lambda_n, "iterations": fit.iterations, "active_set": fit.active_set,
               "kkt_violation": fit.kkt_violation, "converged": fit.converged, "optimizer": fit.optimizer}
    if not fit.converged:
        logger.warning(f"Fit did not converge: KKT violation {fit.kkt_violation:.3g} after {fit.iterations} iterations")
    return run.finish(results, EXIT_OK if fit.converged else EXIT_INCONCLUSIVE)


def run_rate_study(run: Run) -> int:
    cfg = run.block
    rows = rate_experiment(cfg.ns, cfg.p, cfg.s, cfg.reps, run.seed, c_h=cfg.c_h, c_lambda=cfg.c_lambda, lambda_n=cfg.lambda_n,
                           threads=run.config.threads, progress=run.config.progress)
    columns = ["n", "mse", "mse_se", "rate_proxy", "support_recovery", "h_n", "lambda_n", "non_converged"]
    run.csv("rates.csv", columns, [[getattr(r, c) for c in columns] for r in rows])
    non_converged = sum(r.non_converged for r in rows)
    results = {"mse_ratio_last_first": rows[-1].mse / rows[0].mse if rows[0].mse > 0 else None, "non_converged": non_converged}
    if non_converged:
        logger.warning(f"{non_converged} fits did not converge")
    return run.finish(results, EXIT_INCONCLUSIVE if non_converged else EXIT_OK)


SUBCOMMANDS = {
    "constants": (run_constants, "Print the kernel catalog with its expansion constants"),
    "expand-verify": (run_expand_verify, "Build random Fourier expansions and certify their sup error"),
    "tail-bound": (run_tail_bound, "Evaluate a tail bound against the empirical tail of simulated V-statistics"),
    "simulate": (run_simulate, "Simulate AR(1) paths, bivariate pairs or partially linear model data"),
    "indep-test": (run_indep_test, "Run the maximum independence test, or a size/power study when reps > 1"),
    "mdp-probe": (run_mdp_probe, "Compare empirical tails of the standardized Kendall statistic with the normal tail"),
    "plr-fit": (run_plr_fit, "Fit the penalized partially linear estimator"),
    "rate-study": (run_rate_study, "Mean squared error of the partially linear estimator over increasing n"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", type=str, default=None, help="Path to a TOML or JSON configuration file")
    common.add_argument("--seed", type=int, default=None, help="Master seed")
    common.add_argument("--threads", type=int, default=None, help="Worker threads; results do not depend on it")
    common.add_argument("--out", type=str, default=None, help="Output directory")
    common.add_argument("--progress", action="store_true", help="Show progress bars")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser = argparse.ArgumentParser(prog="mixvstat", description="Concentration, testing and estimation experiments for V-statistics of mixing sequences.",
                                     allow_abbrev=False)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in SUBCOMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=help_text, description=help_text, allow_abbrev=False)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args, extras = build_parser().parse_known_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    config_path = args.config
    if extras and not extras[0].startswith("--"):
        if config_path is not None:
            logger.error(f"Config given twice: {config_path} and {extras[0]}")
            return EXIT_INVALID
        config_path = extras.pop(0)
    try:
        overrides = parse_overrides(extras)
        for key, value in (("master_seed", args.seed), ("threads", args.threads), ("output_dir", args.out)):
            if value is not None:
                overrides.append((key, value))
        if args.progress:
            overrides.append(("progress", True))
        config = load_config(config_path, args.command, overrides)
        handler, _ = SUBCOMMANDS[args.command]
        return handler(Run(args.command, config))
    except ResolutionError as e:
        logger.error(f"Inconclusive result: {e}")
        return EXIT_INCONCLUSIVE
    except ValueError as e:
        # ConfigError, UnsupportedKernelError and DomainError are ValueErrors too
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
