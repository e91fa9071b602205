"""
Experiment configuration.

One experiment per YAML file; README.md lists every key.
Process-level settings come from the environment, loaded from .env when present.
"""

import os
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

from .errors import ConfigError
from .geneq import ProductPoint
from .newton import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    Exact,
    FixedDecay,
    InexactnessRule,
    ProximityLinear,
    ProximityQuadratic,
    RelativeBall,
)

logger = logging.getLogger(__name__)

# Load Environment Variables
load_dotenv()

OUT_DIR = os.getenv("GENEQ_OUT_DIR", "results")
LOG_LEVEL = os.getenv("GENEQ_LOG_LEVEL", "INFO")

KARCHER_KKT = "karcher_kkt"
SCALAR_RATE_STUDY = "scalar_rate_study"
KARCHER_RATE_STUDY = "karcher_rate_study"
MREG_PROBE = "mreg_probe"
SEMILOCAL_CHECK = "semilocal_check"
KINDS = (KARCHER_KKT, SCALAR_RATE_STUDY, KARCHER_RATE_STUDY, MREG_PROBE, SEMILOCAL_CHECK)

RULE_KINDS = ("exact", "fixed_decay", "relative_ball", "proximity_linear", "proximity_quadratic")


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    seed: int = 2024
    # Karcher cases
    n_points: int = 10
    radius: float = 2.0
    center: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 1.0])
    mu0: float = 0.0
    rule: Dict[str, Any] = field(default_factory=lambda: {"kind": "fixed_decay", "c": 1.0, "rho": 0.1})
    tol_phi: float = DEFAULT_TOL
    tol_g: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    out_dir: str = OUT_DIR
    # Rate studies and semi-local checks
    coefficients: List[float] = field(default_factory=lambda: [1.0, 0.0, -2.0])
    start: Optional[float] = None
    iota: float = 0.1
    rules: List[str] = field(default_factory=lambda: ["exact", "fixed_decay", "proximity_linear",
                                                      "proximity_quadratic"])
    constants: Dict[str, float] = field(default_factory=dict)
    # Regularity probes
    variant: str = "ln_tr"
    matrix_size: int = 2
    sigma: Any = "auto"
    ball_radius: float = 1.0
    x_range: List[float] = field(default_factory=lambda: [-1.0, 1.0])
    samples: int = 1000
    center_scale: float = 1.0
    source: Optional[str] = None


def _positive(config: ExperimentConfig, *keys: str):
    for key in keys:
        val = getattr(config, key)
        if not isinstance(val, (int, float)) or not val > 0:
            raise ConfigError(f"{config.name}: '{key}' must be positive, got {val!r}")


def validate(config: ExperimentConfig) -> ExperimentConfig:
    if config.kind not in KINDS:
        raise ConfigError(f"{config.name}: unknown kind '{config.kind}' (expected one of {KINDS})")
    _positive(config, "tol_phi", "tol_g", "max_iters")
    if config.kind in (KARCHER_KKT, KARCHER_RATE_STUDY):
        _positive(config, "n_points", "radius")
        if len(config.center) != 4:
            raise ConfigError(f"{config.name}: 'center' must have 4 coordinates on S^3")
        if config.mu0 < 0:
            raise ConfigError(f"{config.name}: 'mu0' must be nonnegative")
    if config.kind == KARCHER_KKT:
        rule_kind = config.rule.get("kind")
        if rule_kind not in ("exact", "fixed_decay", "relative_ball"):
            raise ConfigError(f"{config.name}: rule '{rule_kind}' cannot be used without a known solution")
    if config.kind in (SCALAR_RATE_STUDY, KARCHER_RATE_STUDY):
        unknown = [r for r in config.rules if r not in RULE_KINDS]
        if unknown:
            raise ConfigError(f"{config.name}: unknown rules {unknown}")
        _positive(config, "iota")
    if config.kind == MREG_PROBE:
        _positive(config, "matrix_size", "ball_radius", "samples", "center_scale")
        if len(config.x_range) != 2:
            raise ConfigError(f"{config.name}: 'x_range' must be [low, high]")
        if config.sigma != "auto" and not (isinstance(config.sigma, (int, float)) and config.sigma > 0):
            raise ConfigError(f"{config.name}: 'sigma' must be positive or 'auto'")
    if config.kind == SEMILOCAL_CHECK:
        missing = [k for k in ("sigma", "mu", "alpha", "beta", "theta", "eps", "iota", "delta")
                   if k not in config.constants]
        if missing:
            raise ConfigError(f"{config.name}: constants missing {missing}")
    return config


def load_experiment_config(path: str, seed: Optional[int] = None,
                           out_dir: Optional[str] = None) -> ExperimentConfig:
    """
    Load one experiment from a YAML file. `seed` and `out_dir` override the file.
    Raises ConfigError for unreadable files, unknown keys and invalid values.
    """
    if not os.path.exists(path):
        raise ConfigError(f"Config not found at {path}")
    try:
        with open(path, "r") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")

    raw = dict(raw)
    raw.setdefault("name", os.path.splitext(os.path.basename(path))[0])
    if "kind" not in raw:
        raise ConfigError(f"{path}: missing 'kind'")
    known = set(ExperimentConfig.__dataclass_fields__) - {"source"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    if seed is not None:
        raw["seed"] = seed
    if out_dir is not None:
        raw["out_dir"] = out_dir

    config = ExperimentConfig(**raw, source=path)
    validate(config)
    logger.info(f"Loaded experiment '{config.name}' ({config.kind}) from {path}")
    return config


def build_rule(spec: Dict[str, Any], reference: Optional[ProductPoint] = None) -> InexactnessRule:
    """
    Rule from its config mapping:
      {kind: exact}
      {kind: fixed_decay, c: 1.0, rho: 0.1}
      {kind: relative_ball, eta: 0.1, decay: 0.5, extreme: false}
      {kind: proximity_linear | proximity_quadratic, iota: 0.1, fraction: 0.99}
    Proximity rules need the reference solution.
    """
    kind = spec.get("kind")
    try:
        if kind == "exact":
            return Exact()
        if kind == "fixed_decay":
            return FixedDecay(float(spec.get("c", 1.0)), float(spec.get("rho", 0.1)))
        if kind == "relative_ball":
            return RelativeBall(float(spec.get("eta", 0.1)), float(spec.get("decay", 0.5)),
                                bool(spec.get("extreme", False)))
        if kind in ("proximity_linear", "proximity_quadratic"):
            cls = ProximityLinear if kind == "proximity_linear" else ProximityQuadratic
            return cls(float(spec.get("iota", 0.1)), reference, float(spec.get("fraction", 0.99)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid rule {spec!r}: {e}") from e
    raise ConfigError(f"Unknown rule kind '{kind}' (expected one of {RULE_KINDS})")
