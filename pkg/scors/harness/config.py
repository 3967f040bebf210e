"""
Experiment configuration.

Configs are flat `key = value` (or `key: value`) documents with `#` comments.
Unknown and duplicate keys are rejected with their line number; values are then
validated by the strict ExperimentConfig model.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..errors import ConfigParseError, ConfigValidationError, ScorsValidationError
from ..settings import settings
from .presets import get_preset

METHODS = ("U", "NU", "G", "S", "SGD")

ExperimentKind = Literal["convergence", "clt", "mse", "gamma_check", "timing"]


def _integral(value: Any) -> Any:
    """Accept integer counts written as 1e6 or 1_000_000."""
    if isinstance(value, str):
        text = value.strip().replace("_", "")
        try:
            return int(text)
        except ValueError:
            pass
        try:
            number = float(text)
        except ValueError:
            return value
        if math.isfinite(number) and number.is_integer():
            return int(number)
    return value


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentKind
    family: Literal["logistic", "quadratic"]
    d: int = Field(gt=0)
    preset: Optional[str] = None
    N: int = Field(1000, gt=0)
    samplers: Tuple[str, ...] = METHODS
    c: float = Field(1.0, gt=0)
    alpha: float = 1.0
    step_offset: int = Field(0, ge=0)
    iterations: int = Field(100_000, gt=0)
    budget: Optional[int] = Field(None, gt=0)
    replicates: int = Field(20, gt=0)
    seed: int = Field(1, ge=0)
    output_dir: Optional[str] = None
    nu_mode: Literal["static", "adaptive"] = "static"
    prob_floor: Optional[float] = Field(None, gt=0)
    init: Literal["zero", "gaussian"] = "zero"
    init_radius: float = Field(1.0, ge=0)
    snapshots: int = Field(200, gt=0)
    workers: int = Field(1, gt=0)
    eig_lo: float = Field(0.75, gt=0)
    eig_hi: float = Field(2.0, gt=0)
    noise_scale: float = Field(1.0, ge=0)
    whiten_noise: bool = False
    moment_order: int = Field(1, ge=1)
    grid_points: int = Field(16, ge=2)
    mc_draws: int = Field(1_000_000, ge=100_000)
    reference: Literal["empirical", "generator"] = "empirical"
    timing_repetitions: int = Field(5, gt=0)
    warmup: int = Field(10_000, ge=0)
    dataset: Optional[str] = None
    export_dataset: bool = False

    @field_validator(
        "d", "N", "iterations", "budget", "replicates", "seed", "snapshots", "workers",
        "moment_order", "grid_points", "mc_draws", "timing_repetitions", "warmup", "step_offset",
        mode="before",
    )
    @classmethod
    def _counts(cls, v: Any) -> Any:
        return _integral(v)

    @field_validator("samplers", mode="before")
    @classmethod
    def _split_samplers(cls, v: Any) -> Any:
        if isinstance(v, str):
            v = [part.strip() for part in v.split(",") if part.strip()]
        return tuple(str(part).strip().upper() for part in v)

    @field_validator("samplers")
    @classmethod
    def _known_samplers(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        if not v:
            raise ValueError("sampler kinds must be nonempty")
        unknown = [name for name in v if name not in METHODS]
        if unknown:
            raise ValueError(f"unknown sampler kinds {unknown}, expected a subset of {list(METHODS)}")
        if len(set(v)) != len(v):
            raise ValueError("sampler kinds must not repeat")
        return v

    @field_validator("alpha")
    @classmethod
    def _alpha_range(cls, v: float) -> float:
        if not 0.5 < v <= 1.0:
            raise ValueError(f"alpha={v} violates the step schedule constraint alpha in (1/2, 1]")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.eig_lo > self.eig_hi:
            raise ValueError(f"eig_lo={self.eig_lo} must not exceed eig_hi={self.eig_hi}")
        if self.prob_floor is not None and self.prob_floor > 1.0 / self.d:
            raise ValueError(f"prob_floor={self.prob_floor} must lie in (0, 1/d]")
        if "NU" in self.samplers and self.d < 2:
            raise ValueError("the NU sampler needs d >= 2")
        if self.family == "quadratic" and self.N < 2:
            raise ValueError("the quadratic family needs N >= 2")
        if self.whiten_noise and self.N <= self.d:
            raise ValueError("whiten_noise needs N > d")
        if self.dataset is not None and self.family != "logistic":
            raise ValueError("dataset only applies to the logistic family")
        if self.experiment == "clt" and self.alpha != 1.0:
            raise ValueError("the clt experiment needs alpha = 1")
        if self.experiment == "clt" and self.replicates < 2:
            raise ValueError("the clt experiment needs replicates >= 2")
        if self.experiment == "mse" and self.iterations < 100:
            raise ValueError("the mse experiment needs iterations >= 100")
        return self

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(settings.OUTPUT_DIR) / f"{self.experiment}-{self.family}-d{self.d}-seed{self.seed}"


FIELDS = frozenset(ExperimentConfig.model_fields)


def tokenize_config(text: str) -> Dict[str, str]:
    """Split a config document into raw key/value strings."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        positions = [pos for pos in (line.find("="), line.find(":")) if pos >= 0]
        if not positions:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        cut = min(positions)
        key = line[:cut].strip()
        value = line[cut + 1 :].strip()
        if not key:
            raise ConfigParseError("missing key before separator", line=lineno)
        if key not in FIELDS:
            raise ConfigParseError(f"unknown key {key!r}", line=lineno)
        if key in values:
            raise ConfigParseError(f"duplicate key {key!r}", line=lineno)
        if value == "":
            raise ConfigParseError(f"missing value for {key!r}", line=lineno)
        values[key] = value
    return values


def _format_errors(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        location = ".".join(str(part) for part in err["loc"]) or "config"
        parts.append(f"{location}: {err['msg']}")
    return "; ".join(parts)


def build_config(values: Dict[str, Any]) -> ExperimentConfig:
    """Fill preset defaults under explicit values and validate."""
    merged: Dict[str, Any] = {}
    preset = values.get("preset")
    if preset:
        merged.update(get_preset(str(preset)))
    merged.update(values)
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigValidationError(_format_errors(e)) from e


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate an experiment config document.

    Raises:
        ConfigParseError: malformed line, unknown key or duplicate key (with line number)
        ConfigValidationError: a value violates a config invariant
    """
    return build_config(tokenize_config(text))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScorsValidationError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    out: Optional[str] = None,
    experiment: Optional[str] = None,
) -> ExperimentConfig:
    """Command-line overrides, revalidated against the model."""
    updates: Dict[str, Any] = {}
    if seed is not None:
        updates["seed"] = seed
    if out is not None:
        updates["output_dir"] = out
    if experiment is not None:
        updates["experiment"] = experiment
    if not updates:
        return config
    data = config.model_dump()
    data.update(updates)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError(_format_errors(e)) from e
