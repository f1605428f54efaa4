"""
Experiment configuration: pydantic model, JSON files and --set overrides
"""

import json
import os
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from fields.fan import ImaginaryGeometryParams
from utils.errors import ConfigError, ParameterError
from utils.logger import setup_logger

logger = setup_logger("config")

EXPERIMENT_IDS = (
    "bessel-check",
    "drive",
    "trace",
    "gff",
    "fan",
    "components",
    "connectivity",
    "recover",
    "dims",
    "exit-sides",
    "delta-close",
    "reversal",
    "coverage",
    "hausdorff",
    "martingale",
    "rho-limit",
    "excursions",
)


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"environment variable {name}={value!r} is not an integer")


class ExperimentConfig(BaseModel):
    """Validated settings of one experiment run; echoed into every report"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: str
    kappa: float = Field(default=2.0, gt=0)
    # None means lambda = pi / sqrt(kappa), the symmetric default
    a: Optional[float] = None
    b: Optional[float] = None
    nx: int = Field(default=257, ge=3)
    ny: int = Field(default=257, ge=3)
    dt: float = Field(default=1e-3, gt=0)
    T: float = Field(default=1.0, gt=0)
    n_angles: int = Field(default=9, ge=2)
    n_seeds: int = Field(default=10, ge=0)
    base_seed: int = Field(default_factory=lambda: _env_int("IG_BASE_SEED", 0), ge=0)
    output_dir: str = Field(default_factory=lambda: os.getenv("IG_OUTPUT_DIR", "results"))
    threads: int = Field(default_factory=lambda: _env_int("IG_THREADS", 1), ge=1)
    knobs: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("experiment")
    @classmethod
    def _known_experiment(cls, value: str) -> str:
        if value not in EXPERIMENT_IDS:
            raise ValueError(f"unknown experiment {value!r}; choose one of {', '.join(EXPERIMENT_IDS)}")
        return value

    def ig_params(self) -> ImaginaryGeometryParams:
        """Imaginary-geometry constants with a, b defaulting to lambda"""
        try:
            lam = ImaginaryGeometryParams(self.kappa).lam
            a = lam if self.a is None else self.a
            b = lam if self.b is None else self.b
            return ImaginaryGeometryParams(self.kappa, a, b)
        except ParameterError as e:
            raise ConfigError(f"experiment {self.experiment!r}: {e}") from e


def parse_override(item: str) -> tuple:
    """Split key=value; the value is read as JSON when it parses, as a string otherwise"""
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {item!r} must look like key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Route each key=value to a top-level field if one has that name, to knobs otherwise"""
    merged = dict(data)
    knobs = dict(merged.get("knobs") or {})
    for item in overrides:
        key, value = parse_override(item)
        if key.startswith("knobs."):
            knobs[key[len("knobs."):]] = value
        elif key in ExperimentConfig.model_fields and key != "knobs":
            merged[key] = value
        else:
            knobs[key] = value
    merged["knobs"] = knobs
    return merged


def read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def load_config(
    experiment: str,
    config_path: Optional[str] = None,
    out: Optional[str] = None,
    seeds: Optional[int] = None,
    threads: Optional[int] = None,
    overrides: Iterable[str] = (),
) -> ExperimentConfig:
    """
    Build the configuration of one run

    Layers, later ones win: model defaults, environment, JSON file, CLI flags,
    --set overrides.

    Args:
        experiment (str): Experiment id (the CLI subcommand)
        config_path (str): Optional JSON file
        out (str): Output directory flag
        seeds (int): Number of seeds flag
        threads (int): Worker count flag
        overrides: key=value strings

    Returns:
        Validated ExperimentConfig
    """
    data: Dict[str, Any] = {}
    if config_path:
        data = read_config_file(config_path)
        named = data.get("experiment")
        if named is not None and named != experiment:
            raise ConfigError(f"config file {config_path} is for experiment {named!r}, not {experiment!r}")
    data["experiment"] = experiment
    for key, value in (("output_dir", out), ("n_seeds", seeds), ("threads", threads)):
        if value is not None:
            data[key] = value
    data = apply_overrides(data, overrides)
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration for {experiment!r}:\n{e}") from e
    logger.debug(f"loaded config {config.model_dump()}")
    return config


def knob(config: ExperimentConfig, name: str, default: Any, cast: Optional[Callable[[Any], Any]] = None) -> Any:
    """Experiment-specific value from config.knobs, cast with a readable error"""
    value = config.knobs.get(name, default)
    if cast is None or value is None:
        return value
    try:
        return cast(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"knob {name}={value!r} for experiment {config.experiment!r} is invalid: {e}") from e


def output_path(config: ExperimentConfig, name: str) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path / name
