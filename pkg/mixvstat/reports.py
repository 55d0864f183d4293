"""Artifact writers: CSV tables and JSON manifests

Both formats are byte-stable: CSV floats are written with repr (shortest round-trip form),
JSON keys are sorted, and manifests carry no timestamps.
"""
from dataclasses import asdict, is_dataclass
from enum import Enum
import git
import json
import logging
import math
import numpy as np
from pathlib import Path
import re
import scipy
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Writes a header row followed by one line per row, '\\n' line ends"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        row = list(row)
        if len(row) != len(columns):
            raise ValueError(f"Row {row} has {len(row)} cells, expected {len(columns)}")
        lines.append(",".join(_cell(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return path


### Column schema

COLUMN_DESCRIPTIONS: Dict[str, str] = {
    "kernel": "catalog kernel id",
    "F": "coefficient-sum constant of the expansion",
    "B": "sup bound of the expansion bases",
    "mu": "moment constant mu_a of the bases, or a label when it depends on the data law",
    "regime": "construction F comes from: positive_definite, lipschitz, discontinuous, discontinuous_product or exact",
    "seed_index": "replication index of the certification run",
    "seed": "seed of the expansion",
    "h": "pre-smoothing bandwidth, empty when the kernel is expanded unsmoothed",
    "grid_resolution": "points per axis of the certification grid",
    "K_used": "number of random features of the expansion",
    "grid_sup_error": "max |f - f~| over grid and random in-domain points, in kernel units",
    "random_sup_error": "max |f - f~| over uniform random in-domain points, in kernel units",
    "target_t": "requested sup error, in kernel units",
    "passed": "whether the sup error is within target_t",
    "threshold": "deviation level at which the bound applies (x, plus C1 t' for the general bound)",
    "bound": "upper bound on P(|V_n - theta| >= threshold)",
    "vacuous": "whether the bound is 1 or more",
    "empirical_tail": "fraction of replications at or above the threshold",
    "dominates": "whether the bound is at least the empirical tail",
    "pair_id": "index of the coordinate pair",
    "index": "time index within the pair stream",
    "y": "second coordinate of the pair at this time index",
    "Y": "response of the partially linear model",
    "W": "nonparametric covariate of the partially linear model",
    "k": "coefficient index",
    "beta_star": "true regression coefficient",
    "beta_hat": "estimated regression coefficient",
    "rep": "replication index",
    "null_reject": "decision of the test on data drawn under independence",
    "alt_reject": "decision of the test on data drawn under the alternative",
    "u_stat": "Kendall U-statistic of the pair",
    "sigma2": "long-run variance used to standardize the pair",
    "u_tilde": "standardized statistic sqrt(n) (u_stat - theta) / (2 sqrt(sigma2))",
    "normal_tail": "standard normal survival function 1 - Phi(x)",
    "ratio": "empirical_tail / normal_tail",
    "se": "binomial standard error of empirical_tail",
    "iteration": "optimizer iteration",
    "objective": "penalized objective value",
    "n": "sample size",
    "mse": "mean squared error of beta_hat over replications",
    "mse_se": "standard error of mse",
    "rate_proxy": "s log(p) / n",
    "support_recovery": "fraction of replications whose estimated support contains the true support",
    "h_n": "kernel bandwidth of the estimator",
    "lambda_n": "lasso penalty level",
    "non_converged": "number of replications stopped before convergence",
}

# Columns whose meaning depends on the file
FILE_COLUMN_DESCRIPTIONS: Dict[Tuple[str, str], str] = {
    ("tail_bound.csv", "x"): "deviation level requested on the x grid",
    ("mdp_probe.csv", "x"): "threshold on the standardized statistic sqrt(n) (U_n - theta) / (m nu)",
    ("pairs.csv", "x"): "first coordinate of the pair at this time index",
}

INDEXED_COLUMNS: List[Tuple[re.Pattern, str]] = [
    (re.compile(r"c(\d+)"), "coordinate {} of the process sample"),
    (re.compile(r"X(\d+)"), "linear covariate {} of the partially linear model"),
]


def describe_column(file_name: str, column: str) -> str:
    """Description of a column of an output file; undocumented columns are an error"""
    if (file_name, column) in FILE_COLUMN_DESCRIPTIONS:
        return FILE_COLUMN_DESCRIPTIONS[(file_name, column)]
    if column in COLUMN_DESCRIPTIONS:
        return COLUMN_DESCRIPTIONS[column]
    for pattern, template in INDEXED_COLUMNS:
        match = pattern.fullmatch(column)
        if match:
            return template.format(match.group(1))
    raise ValueError(f"Column {column} of {file_name} has no description")


def column_schema(file_name: str, columns: Sequence[str]) -> List[Dict[str, str]]:
    """Manifest entry of an output file: one {name, description} record per column, in file order"""
    return [{"name": column, "description": describe_column(file_name, column)} for column in columns]


def jsonable(value: Any) -> Any:
    """Converts dataclasses, enums and numpy values into plain JSON types; non-finite floats become strings"""
    if is_dataclass(value) and not isinstance(value, type):
        return jsonable(asdict(value))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if value is None or isinstance(value, str):
        return value
    if callable(value):
        return getattr(value, "__name__", repr(value))
    return str(value)


def write_json(path, document: Dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(jsonable(document), f, sort_keys=True, indent=4)
        f.write("\n")
    return path


def git_commit() -> Optional[str]:
    """Commit hash of the repository holding the working directory, None outside a repository"""
    try:
        return git.Repo(search_parent_directories=True).head.object.hexsha
    except (git.InvalidGitRepositoryError, git.NoSuchPathError, ValueError):
        logger.debug("Not inside a git repository, no commit recorded")
        return None


def versions() -> Dict[str, str]:
    from mixvstat import __version__
    return {"mixvstat": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def manifest(command: str, inputs: Dict, seed: Optional[int], outputs: Dict[str, List[Dict[str, str]]],
             results: Optional[Dict] = None, exit_code: int = 0) -> Dict:
    """Run manifest: command, validated inputs, seed, versions, commit, output files with their column schemas and summary results"""
    return {
        "command": command,
        "inputs": inputs,
        "seed": seed,
        "versions": versions(),
        "git_commit": git_commit(),
        "outputs": outputs,
        "results": results or {},
        "exit_code": exit_code,
    }
