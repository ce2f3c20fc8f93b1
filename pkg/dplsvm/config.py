import dataclasses
import os
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from dotenv import dotenv_values, find_dotenv, load_dotenv

from dplsvm.errors import ConfigError

VERSION = "0.1.0"

ENV_PREFIX = "DPLSVM_"
# process settings share the prefix but are not run config keys
PROCESS_KEYS = frozenset(["ENV_FILE", "DEBUG", "LOG_LEVEL", "COLOR_LOG", "SENTRY_DSN"])
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def load_process_env(path: Optional[str] = None) -> Optional[str]:
    """Load DPLSVM_* process settings from a dotenv file; variables already in
    the environment win. A relative path is taken from the working directory,
    and without one the nearest .env above the working directory is used.
    Returns the file loaded, if any."""
    path = path or os.environ.get(ENV_PREFIX + "ENV_FILE")
    if path:
        path = os.path.abspath(os.path.expanduser(path))
        if not os.path.exists(path):
            raise ConfigError(f"env file {path} does not exist")
    else:
        path = find_dotenv(usecwd=True) or None
    if path:
        load_dotenv(path)
    return path


def env_flag(name: str, environ=None) -> bool:
    environ = os.environ if environ is None else environ
    return environ.get(ENV_PREFIX + name, "").strip().lower() in ("1", "true", "yes")


def env_log_level(environ=None) -> str:
    environ = os.environ if environ is None else environ
    level = environ.get(ENV_PREFIX + "LOG_LEVEL", "INFO").strip().upper()
    if level not in LOG_LEVELS:
        raise ConfigError(f"{ENV_PREFIX}LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {level}")
    return level


ENV_FILE = load_process_env()

# chain invariants are asserted after every sweep
DEBUG = env_flag("DEBUG")
COLOR_LOG = env_flag("COLOR_LOG")
LOG_LEVEL = env_log_level()
SENTRY_DSN = os.environ.get(ENV_PREFIX + "SENTRY_DSN")

# numerical zero for precision entries when computing density
ZERO_THRESHOLD = 1e-8

# stick-breaking components represented by the slice sampler
MAX_COMPONENTS = 512


@dataclass
class RunConfig:
    """Every key a run can be configured with, defaults included.

    Values come from (later wins) the defaults below, a key=value file,
    DPLSVM_<KEY> environment variables and --set key=value flags.
    """

    # prior
    a1: float = 1.0
    b1: float = 1.0
    M: float = 1.0
    r: float = 1.0
    delta: float = 1.0
    prior_mode: str = "dp"
    a_lambda: float = 0.1
    b_lambda: float = 0.1
    # dynamic prior; b = 0 means b = R
    b: int = 0
    c: float = 1.0
    d: float = 1.0
    gamma_prior_var: float = 100.0
    # sampler
    n_iter: int = 5000
    burn_in: int = 2500
    thin: int = 5
    seed: int = 20200101
    n_chains: int = 2
    threads: int = 1
    log_every: int = 500
    max_components: int = MAX_COMPONENTS
    intercept: bool = False
    # network estimation
    density: float = 0.2
    density_grid: Tuple[float, ...] = (0.12, 0.15, 0.18, 0.2, 0.25)
    lambda_grid_size: int = 20
    glasso_tol: float = 1e-6
    glasso_max_iter: int = 500
    edge_weight: str = "precision"
    # features
    sd_threshold: float = 0.01
    standardize: bool = True
    feature_method: str = "manual"
    variance_target: float = 0.95
    window: int = 20
    window_grid: Tuple[int, ...] = (20, 30, 40)
    zeta: float = 0.1
    # inference
    alpha: float = 0.05
    adjust: str = "none"
    n_splits: int = 10
    train_fraction: float = 0.9
    validation_fraction: float = 0.2
    plot_data: bool = False
    # synthetic data
    synth_n: int = 200
    synth_q: int = 100
    synth_c: int = 0
    synth_signals: int = 10
    synth_magnitudes: Tuple[float, ...] = (2.0, 0.75)
    synth_bayes_error: float = 0.05
    # logistic labels take a noise scale instead of a Bayes error
    synth_noise_scale: float = 1.0
    synth_mechanism: str = "margin"
    synth_r: int = 2
    synth_length: int = 20
    synth_regions: int = 10
    synth_timepoints: int = 120
    test_fraction: float = 0.25

    def validate(self):
        positive = ["a1", "b1", "M", "r", "delta", "a_lambda", "b_lambda", "c", "d"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.prior_mode not in ("dp", "global", "independent"):
            raise ConfigError(f"unknown prior_mode {self.prior_mode}")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigError("burn_in must be in [0, n_iter)")
        if self.thin < 1 or self.n_chains < 1 or self.threads < 1:
            raise ConfigError("thin, n_chains and threads must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.adjust not in ("none", "bonferroni"):
            raise ConfigError(f"unknown adjust {self.adjust}")
        if self.feature_method not in ("manual", "pca"):
            raise ConfigError(f"unknown feature_method {self.feature_method}")
        if self.edge_weight not in ("precision", "partial"):
            raise ConfigError(f"unknown edge_weight {self.edge_weight}")
        if not 0 < self.density <= 1:
            raise ConfigError("density must be in (0, 1]")
        if not 0 < self.zeta <= 0.5:
            raise ConfigError("zeta must be in (0, 0.5]")
        if self.synth_mechanism not in ("margin", "logistic"):
            raise ConfigError(f"unknown synth_mechanism {self.synth_mechanism}")
        if not 0 < self.validation_fraction < 1 or not 0 < self.test_fraction < 1:
            raise ConfigError("validation_fraction and test_fraction must be in (0, 1)")
        for name in ("density_grid", "window_grid"):
            grid = getattr(self, name)
            if len(grid) == 0 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError(f"{name} must be non-empty and strictly increasing")

    def hyperparameters(self):
        # local import: svm_static depends on this module
        from dplsvm.svm_static import Hyperparameters

        return Hyperparameters(
            a1=self.a1,
            b1=self.b1,
            M=self.M,
            r=self.r,
            delta=self.delta,
            prior_mode=self.prior_mode,
            a_lambda=self.a_lambda,
            b_lambda=self.b_lambda,
            b=self.b,
            c=self.c,
            d=self.d,
            gamma_prior_var=self.gamma_prior_var,
            n_iter=self.n_iter,
            burn_in=self.burn_in,
            thin=self.thin,
            seed=self.seed,
            n_chains=self.n_chains,
            threads=self.threads,
            log_every=self.log_every,
            max_components=self.max_components,
        )

    def to_lines(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
# env var names are upper case, field names are mixed (M)
_ENV_NAMES = {name.upper(): name for name in _FIELDS}


def _coerce(name: str, raw: str):
    default = _FIELDS[name].default
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            item_type = type(default[0]) if default else float
            return tuple(item_type(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"cannot parse {name}={raw!r}")


def _apply(values: Dict[str, str], source: str, resolved: dict):
    for key, raw in values.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r} in {source}")
        if raw is None:
            raise ConfigError(f"missing value for {key!r} in {source}")
        resolved[key] = _coerce(key, raw)


def parse_overrides(pairs) -> Dict[str, str]:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value
    return overrides


def load_run_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, str]] = None,
    environ: Optional[Dict[str, str]] = None,
) -> RunConfig:
    resolved = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        _apply(dict(dotenv_values(path)), path, resolved)

    environ = os.environ if environ is None else environ
    env_values = {
        _ENV_NAMES.get(k[len(ENV_PREFIX) :], k[len(ENV_PREFIX) :]): v
        for k, v in environ.items()
        if k.startswith(ENV_PREFIX) and k[len(ENV_PREFIX) :] not in PROCESS_KEYS
    }
    _apply(env_values, "environment", resolved)
    _apply(overrides or {}, "--set", resolved)

    run_config = RunConfig(**resolved)
    run_config.validate()
    return run_config


def default_run_config(**kw) -> RunConfig:
    return dataclasses.replace(RunConfig(), **kw)


