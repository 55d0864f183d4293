import json
import pytest

from mixvstat.cli import EXIT_INCONCLUSIVE, EXIT_INVALID, EXIT_OK, build_parser, main


def read_manifest(directory):
    with open(directory / "manifest.json", encoding="utf-8") as f:
        return json.load(f)


def read_lines(path):
    return path.read_text(encoding="utf-8").splitlines()


### Parser tests

def test_parser_subcommands():
    """Every subcommand is registered"""
    parser = build_parser()
    for command in ["constants", "expand-verify", "tail-bound", "simulate", "indep-test", "mdp-probe", "plr-fit", "rate-study"]:
        args, _ = parser.parse_known_args([command])
        assert args.command == command

def test_parser_requires_subcommand():
    """A subcommand is mandatory"""
    with pytest.raises(SystemExit):
        build_parser().parse_args([])

### Subcommand tests

def test_constants(tmp_path, capsys):
    """The catalog is printed and written with a manifest"""
    assert main(["constants", "--out", str(tmp_path)]) == EXIT_OK
    lines = read_lines(tmp_path / "constants" / "constants.csv")
    assert lines[0] == "kernel,F,B,mu,regime"
    assert any(line.startswith("cosine,") for line in lines)
    assert "gaussian" in capsys.readouterr().out
    manifest = read_manifest(tmp_path / "constants")
    assert manifest["command"] == "constants"
    assert manifest["exit_code"] == EXIT_OK
    assert [c["name"] for c in manifest["outputs"]["constants.csv"]] == ["kernel", "F", "B", "mu", "regime"]
    assert all(c["description"] for c in manifest["outputs"]["constants.csv"])

def test_expand_verify(tmp_path):
    """One certificate per seed"""
    code = main(["expand-verify", "--out", str(tmp_path), "--seeds", "2", "--K", "200", "--t", "0.5", "--grid_res", "50"])
    assert code == EXIT_OK
    lines = read_lines(tmp_path / "expand-verify" / "certificates.csv")
    assert len(lines) == 3
    assert lines[0].startswith("seed_index,seed,h,")
    assert 0 <= read_manifest(tmp_path / "expand-verify")["results"]["pass_rate"] <= 1

def test_expand_verify_spearman(tmp_path):
    """The Spearman kernel is certified through its two sign factors"""
    code = main(["expand-verify", "--out", str(tmp_path), "--kernel", "spearman", "--M", "1", "--M1", "1", "--M2", "0.2",
                 "--t", "0.5", "--K", "4000", "--seeds", "1", "--grid_res", "50"])
    assert code == EXIT_OK
    lines = read_lines(tmp_path / "expand-verify" / "certificates.csv")
    assert len(lines) == 2
    assert lines[1].split(",")[-1] == "true"

def test_tail_bound(tmp_path):
    """The degenerate bound is tabulated against the empirical tail"""
    code = main(["tail-bound", "--out", str(tmp_path), "--bound", "degenerate", "--K", "50", "--t", "0.5", "--n", "30",
                 "--reps", "10", "--x_grid", "[0.1,0.5]"])
    assert code == EXIT_OK
    lines = read_lines(tmp_path / "tail-bound" / "tail_bound.csv")
    assert lines[0] == "x,threshold,bound,vacuous,empirical_tail,dominates"
    assert len(lines) == 3

def test_simulate_pairs_thread_independent(tmp_path):
    """Artifacts are byte-identical whatever the number of threads"""
    args = ["simulate", "--kind", "pairs", "--p", "3", "--n", "10", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a"), "--threads", "1"]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == EXIT_OK
    for name in ["pairs.csv", "manifest.json"]:
        assert (tmp_path / "a" / "simulate" / name).read_bytes() == (tmp_path / "b" / "simulate" / name).read_bytes()
    assert len(read_lines(tmp_path / "a" / "simulate" / "pairs.csv")) == 31

def test_simulate_plr(tmp_path):
    """PLR data is written with its true coefficients"""
    assert main(["simulate", "--kind", "plr", "--n", "20", "--p", "5", "--s", "2", "--out", str(tmp_path)]) == EXIT_OK
    assert read_lines(tmp_path / "simulate" / "data.csv")[0] == "Y,W,X0,X1,X2,X3,X4"
    assert len(read_lines(tmp_path / "simulate" / "beta_star.csv")) == 6

@pytest.mark.parametrize("argv", [
    ["simulate", "--kind", "ar1", "--n", "10", "--d", "2"],
    ["simulate", "--kind", "pairs", "--p", "2", "--n", "10"],
    ["simulate", "--kind", "plr", "--n", "20", "--p", "5", "--s", "2"],
    ["indep-test", "--p", "3", "--n", "50"],
    ["mdp-probe", "--reps", "20", "--n", "30", "--x_grid", "[0.0,1.0]"],
    ["plr-fit", "--n", "60", "--p", "5", "--s", "2"],
])
def test_manifest_describes_every_column(tmp_path, argv):
    """Each output file is listed with a described record per CSV column"""
    assert main(argv + ["--out", str(tmp_path)]) in (EXIT_OK, EXIT_INCONCLUSIVE)
    directory = tmp_path / argv[0]
    outputs = read_manifest(directory)["outputs"]
    assert outputs
    for name, schema in outputs.items():
        assert read_lines(directory / name)[0].split(",") == [c["name"] for c in schema]
        assert all(isinstance(c["description"], str) and c["description"] for c in schema)

def test_indep_test_config_file(tmp_path):
    """A positional config file sets the block and the seed"""
    path = tmp_path / "config.toml"
    path.write_text(f'master_seed = 3\noutput_dir = "{(tmp_path / "out").as_posix()}"\n\n[indep_test]\np = 4\nn = 50\n')
    assert main(["indep-test", str(path)]) == EXIT_OK
    manifest = read_manifest(tmp_path / "out" / "indep-test")
    assert manifest["seed"] == 3
    assert manifest["inputs"]["indep_test"]["p"] == 4
    assert isinstance(manifest["results"]["reject"], bool)
    assert len(read_lines(tmp_path / "out" / "indep-test" / "pairs.csv")) == 5

def test_indep_test_study(tmp_path):
    """reps > 1 runs a size and power study"""
    code = main(["indep-test", "--out", str(tmp_path), "--p", "3", "--n", "50", "--reps", "4", "--alt_correlation", "0.9"])
    assert code == EXIT_OK
    assert read_lines(tmp_path / "indep-test" / "decisions.csv")[0] == "rep,null_reject,alt_reject"
    assert read_manifest(tmp_path / "indep-test")["results"]["empirical_power"] is not None

def test_mdp_probe(tmp_path):
    """One row per threshold"""
    assert main(["mdp-probe", "--out", str(tmp_path), "--reps", "20", "--n", "30", "--x_grid", "[0.0,1.0]"]) == EXIT_OK
    assert len(read_lines(tmp_path / "mdp-probe" / "mdp_probe.csv")) == 3

def test_plr_fit_not_converged(tmp_path):
    """Stopping before convergence exits with code 3"""
    code = main(["plr-fit", "--out", str(tmp_path), "--n", "50", "--p", "5", "--s", "2", "--max_iter", "1", "--tol", "1e-14"])
    assert code == EXIT_INCONCLUSIVE
    assert read_manifest(tmp_path / "plr-fit")["results"]["converged"] is False

def test_plr_fit(tmp_path):
    """A converged fit writes the estimate and the objective trace"""
    assert main(["plr-fit", "--out", str(tmp_path), "--n", "60", "--p", "5", "--s", "2"]) == EXIT_OK
    assert read_lines(tmp_path / "plr-fit" / "beta.csv")[0] == "k,beta_hat,beta_star"

def test_rate_study(tmp_path):
    """One row per sample size"""
    code = main(["rate-study", "--out", str(tmp_path), "--ns", "[40,80]", "--p", "5", "--s", "2", "--reps", "2"])
    assert code in (EXIT_OK, EXIT_INCONCLUSIVE)
    assert len(read_lines(tmp_path / "rate-study" / "rates.csv")) == 3

### Error tests

@pytest.mark.parametrize("argv", [
    ["indep-test", "--pvalue", "0.1"],
    ["indep-test", "--sigma2_method", "given"],
    ["simulate", "--kind", "garch"],
    ["expand-verify", "--kernel", "epanechnikov"],
    ["expand-verify", "--kernel", "spearman"],
])
def test_invalid_configuration(tmp_path, argv):
    """Invalid configurations exit with code 2"""
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_INVALID

def test_missing_config_file(tmp_path):
    """A missing config file exits with code 2"""
    assert main(["constants", str(tmp_path / "absent.toml")]) == EXIT_INVALID
