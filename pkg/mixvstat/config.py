"""Experiment configuration: one typed block per subcommand under a root ExperimentConfig

Config files are TOML or JSON. Unknown keys at any level are rejected. Command-line
overrides are `--key value` pairs: a key whose first segment names a root field is a
dotted path from the root (`--indep_test.alpha 0.01`, `--master_seed 3`), any other key
is relative to the block of the running subcommand (`--alpha 0.01`, `--process.coeffs
[0.3,0.5]`). Values are parsed as JSON when possible, otherwise kept as strings.
"""
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from enum import Enum
import json
import logging
from pathlib import Path
import tomllib
from typing import Any, Dict, List, Optional, Sequence, Tuple, get_type_hints

from mixvstat.errors import ConfigError
from mixvstat.independence import Sigma2Methods
from mixvstat.kernels import KERNEL_BUILDERS
from mixvstat.plr import OptimizerModes
from mixvstat.processes import DEFAULT_BURN_IN, AR1Config, InnovationModes

logger = logging.getLogger(__name__)


class TailBoundKinds(Enum):
    DEGENERATE = "degenerate"
    GENERAL = "general"


class SimulationKinds(Enum):
    AR1 = "ar1"
    PAIRS = "pairs"
    PLR = "plr"


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


@dataclass
class ProcessConfig:
    """AR(1) process parameters; see processes.AR1Config"""
    coeffs: List[float] = field(default_factory=lambda: [0.5])
    innovation: str = InnovationModes.GAUSSIAN.value
    sigma: float = 1.0
    df: float = 5.0
    low: float = -1.0
    high: float = 1.0
    init: Optional[str] = None
    burn_in: int = DEFAULT_BURN_IN

    def to_ar1(self) -> AR1Config:
        return AR1Config(coeffs=tuple(self.coeffs), innovation=self.innovation, sigma=self.sigma, df=self.df,
                         low=self.low, high=self.high, init=self.init, burn_in=self.burn_in)

    def __post_init__(self):
        self.to_ar1()


@dataclass
class ConstantsConfig:
    d: int = 1
    M: float = 3.0
    M1: float = 5.0
    M2: float = 0.1
    t: float = 0.1

    def __post_init__(self):
        _require(self.d >= 1, f"d must be at least 1, found {self.d}")
        _require(min(self.M, self.M1, self.M2, self.t) > 0, f"M, M1, M2 and t must be positive, found {self}")


@dataclass
class ExpandVerifyConfig:
    """Certification runs of random Fourier expansions, one per seed

    M2, when set, excludes an M2-band around the kernel's jump points and expands the
    kernel mollified at bandwidth h (chosen from M2 and t when not given). The spearman
    kernel is the product of two sign expansions and is certified through its factors.
    """
    kernel: str = "gaussian"
    d: int = 1
    M: float = 3.0
    t: float = 0.05
    K: int = 2000
    seeds: int = 20
    grid_res: int = 200
    M1: float = 5.0
    M2: Optional[float] = None
    h: Optional[float] = None
    min_pass_rate: float = 0.95

    def __post_init__(self):
        _require(self.kernel in KERNEL_BUILDERS, f"Unknown kernel {self.kernel}, accepted kernels are {sorted(KERNEL_BUILDERS)}")
        _require(self.d >= 1 and self.K >= 1 and self.seeds >= 1, f"d, K and seeds must be positive, found {self}")
        _require(min(self.M, self.t, self.M1) > 0, f"M, t and M1 must be positive, found {self}")
        _require(self.M2 is None or self.M2 > 0, f"M2 must be positive, found {self.M2}")
        _require(self.kernel != "spearman" or self.M2 is not None, "The spearman kernel is expanded off its jump bands and needs M2")
        _require(self.h is None or self.h > 0, f"h must be positive, found {self.h}")
        _require(0 <= self.min_pass_rate <= 1, f"min_pass_rate must lie in [0, 1], found {self.min_pass_rate}")


@dataclass
class TailBoundConfig:
    """Tail bound of a Gaussian-kernel V-statistic of Gaussian AR(1) data against its empirical tail"""
    bound: str = TailBoundKinds.GENERAL.value
    d: int = 1
    M: float = 6.0
    t: float = 0.1
    K: int = 2000
    coeff: float = 0.5
    gamma1: float = 1.0
    gamma2: Optional[float] = None  # -log|coeff| when not given
    delta: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    C_const: float = 1.0
    n: int = 500
    reps: int = 2000
    x_grid: List[float] = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.3, 0.5])
    mc_budget: int = 2000
    n_anchors: int = 20

    def __post_init__(self):
        _require(self.bound in [e.value for e in TailBoundKinds], f"Unknown bound {self.bound}, accepted bounds are {[e.value for e in TailBoundKinds]}")
        _require(0 < abs(self.coeff) < 1, f"coeff must satisfy 0 < |coeff| < 1, found {self.coeff}")
        _require(self.n >= 2 and self.reps >= 1 and self.mc_budget >= 100, f"Need n >= 2, reps >= 1 and mc_budget >= 100, found {self}")
        _require(all(x > 0 for x in self.x_grid), f"x_grid values must be positive, found {self.x_grid}")
        _require(self.gamma2 is None or self.gamma2 > 0, f"gamma2 must be positive, found {self.gamma2}")


@dataclass
class SimulateConfig:
    kind: str = SimulationKinds.AR1.value
    n: int = 1000
    d: int = 1
    p: int = 2
    s: int = 3
    correlation: float = 0.0
    process: ProcessConfig = field(default_factory=ProcessConfig)

    def __post_init__(self):
        _require(self.kind in [e.value for e in SimulationKinds], f"Unknown simulation kind {self.kind}, accepted kinds are {[e.value for e in SimulationKinds]}")
        _require(self.n >= 1 and self.d >= 1 and self.p >= 1, f"n, d and p must be positive, found {self}")
        _require(-1 <= self.correlation <= 1, f"correlation must lie in [-1, 1], found {self.correlation}")


@dataclass
class IndepTestConfig:
    """Maximum test over p pairs; reps > 1 runs a size (and, with alt_correlation, power) study"""
    p: int = 50
    n: int = 1000
    alpha: float = 0.05
    sigma2_method: str = Sigma2Methods.CLOSED_FORM_GAUSSIAN.value
    sigma2: Optional[float] = None
    correlation: float = 0.0
    reps: int = 1
    alt_correlation: Optional[float] = None
    lag_cap: int = 20
    mc_budget: int = 1_000_000
    process: ProcessConfig = field(default_factory=lambda: ProcessConfig(coeffs=[0.3, 0.5]))

    def __post_init__(self):
        _require(self.p >= 2 and self.n >= 2, f"Need p >= 2 and n >= 2, found p={self.p}, n={self.n}")
        _require(0 < self.alpha < 1, f"alpha must lie in (0, 1), found {self.alpha}")
        _require(self.sigma2_method in [e.value for e in Sigma2Methods],
                 f"Unknown sigma2_method {self.sigma2_method}, accepted methods are {[e.value for e in Sigma2Methods]}")
        _require((self.sigma2_method == Sigma2Methods.GIVEN.value) == (self.sigma2 is not None),
                 f"sigma2 must be set exactly when sigma2_method is {Sigma2Methods.GIVEN.value}")
        _require(self.sigma2 is None or self.sigma2 > 0, f"sigma2 must be positive, found {self.sigma2}")
        _require(self.reps >= 1, f"reps must be positive, found {self.reps}")
        _require(self.reps == 1 or self.sigma2_method != Sigma2Methods.PLUGIN.value,
                 "Size/power studies need a model-based or given sigma2")
        for c in (self.correlation, self.alt_correlation):
            _require(c is None or -1 <= c <= 1, f"Correlations must lie in [-1, 1], found {c}")


@dataclass
class MdpProbeConfig:
    n: int = 2000
    reps: int = 10_000
    x_grid: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    nu: Optional[float] = None  # square root of the closed-form Kendall sigma^2 when not given
    process: ProcessConfig = field(default_factory=lambda: ProcessConfig(coeffs=[0.3, 0.5]))

    def __post_init__(self):
        _require(self.n >= 2 and self.reps >= 1, f"Need n >= 2 and reps >= 1, found n={self.n}, reps={self.reps}")
        _require(len(self.x_grid) > 0, "x_grid must not be empty")
        _require(self.nu is None or self.nu > 0, f"nu must be positive, found {self.nu}")


@dataclass
class PlrFitConfig:
    """Single fit; data is read from a CSV (Y, W, X0, ...) when given, simulated otherwise"""
    data: Optional[str] = None
    n: int = 400
    p: int = 100
    s: int = 3
    h_n: Optional[float] = None
    lambda_n: Optional[float] = None
    c_h: float = 1.0
    c_lambda: float = 2.0
    h_max: float = 1.0
    optimizer: Optional[str] = None
    tol: float = 1e-8
    max_iter: int = 10_000

    def __post_init__(self):
        _require(self.n >= 2 and self.p >= 2 and 0 <= self.s <= self.p, f"Need n >= 2, p >= 2 and 0 <= s <= p, found {self}")
        _require(self.optimizer is None or self.optimizer in [e.value for e in OptimizerModes],
                 f"Unknown optimizer {self.optimizer}, accepted optimizers are {[e.value for e in OptimizerModes]}")
        _require(min(self.c_h, self.c_lambda, self.h_max, self.tol) > 0, f"c_h, c_lambda, h_max and tol must be positive, found {self}")


@dataclass
class RateStudyConfig:
    ns: List[int] = field(default_factory=lambda: [200, 400, 800])
    p: int = 100
    s: int = 3
    reps: int = 50
    c_h: float = 1.0
    c_lambda: float = 2.0
    lambda_n: Optional[float] = None

    def __post_init__(self):
        _require(len(self.ns) > 0 and all(b > a for a, b in zip(self.ns, self.ns[1:])), f"ns must be increasing, found {self.ns}")
        _require(self.p >= 2 and 0 <= self.s <= self.p and self.reps >= 1, f"Need p >= 2, 0 <= s <= p and reps >= 1, found {self}")


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    output_dir: str = "outputs"
    threads: int = 1
    progress: bool = False
    constants: ConstantsConfig = field(default_factory=ConstantsConfig)
    expand_verify: ExpandVerifyConfig = field(default_factory=ExpandVerifyConfig)
    tail_bound: TailBoundConfig = field(default_factory=TailBoundConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    indep_test: IndepTestConfig = field(default_factory=IndepTestConfig)
    mdp_probe: MdpProbeConfig = field(default_factory=MdpProbeConfig)
    plr_fit: PlrFitConfig = field(default_factory=PlrFitConfig)
    rate_study: RateStudyConfig = field(default_factory=RateStudyConfig)

    def __post_init__(self):
        _require(self.master_seed >= 0, f"master_seed must be non-negative, found {self.master_seed}")
        _require(self.threads >= 1, f"threads must be at least 1, found {self.threads}")

    def block(self, command: str):
        return getattr(self, block_name(command))


def block_name(command: str) -> str:
    return command.replace("-", "_")


def _build(cls, document: Dict[str, Any], path: str = ""):
    """Instantiates a (possibly nested) config dataclass, rejecting unknown keys"""
    if not isinstance(document, dict):
        raise ConfigError(f"Config section {path or '<root>'} must be a table, found {type(document).__name__}")
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(document) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys {[f'{path}{k}' for k in unknown]}, accepted keys are {sorted(known)}")
    kwargs = {}
    for key, value in document.items():
        if is_dataclass(hints[key]):
            kwargs[key] = _build(hints[key], value, f"{path}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid config section {path or '<root>'}: {e}") from e


def load_document(path) -> Dict[str, Any]:
    """Reads a TOML or JSON config file into a dictionary"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file {path} does not exist")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        if path.suffix == ".json":
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Config file {path} could not be parsed: {e}") from e
    raise ConfigError(f"Unrecognized config format {path.suffix}, accepted formats are .toml and .json")


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(tokens: Sequence[str]) -> List[Tuple[str, Any]]:
    """Turns ['--key', 'value', '--other=value', ...] into (key, parsed value) pairs"""
    overrides = []
    k = 0
    while k < len(tokens):
        token = tokens[k]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError(f"Expected an override flag --key, found {token}")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            k += 1
        else:
            if k + 1 >= len(tokens):
                raise ConfigError(f"Override {token} has no value")
            raw = tokens[k + 1]
            k += 2
        overrides.append((key.replace("-", "_"), parse_value(raw)))
    return overrides


def _set_path(document: Dict[str, Any], keys: List[str], value: Any):
    for key in keys[:-1]:
        child = document.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Cannot override inside non-table key {key}")
        document = child
    document[keys[-1]] = value


def build_config(document: Optional[Dict[str, Any]] = None, command: Optional[str] = None,
                 overrides: Sequence[Tuple[str, Any]] = ()) -> ExperimentConfig:
    """Merges overrides into the document and validates the result"""
    document = json.loads(json.dumps(document or {}))
    root_keys = {f.name for f in fields(ExperimentConfig)}
    for key, value in overrides:
        keys = key.split(".")
        if keys[0] not in root_keys:
            if command is None:
                raise ConfigError(f"Override {key} is not a root key and no subcommand is running")
            keys = [block_name(command)] + keys
        _set_path(document, keys, value)
    config = _build(ExperimentConfig, document)
    logger.debug(f"Validated config {asdict(config)}")
    return config


def load_config(path=None, command: Optional[str] = None, overrides: Sequence[Tuple[str, Any]] = ()) -> ExperimentConfig:
    return build_config(load_document(path) if path is not None else {}, command, overrides)
