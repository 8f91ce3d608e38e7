"""JSON pipeline configuration with strict validation.

An empty JSON object yields the desk-scale defaults (32x32 images, 50
diffusion steps, 100 paired / 300 unpaired / 50 test items, seed 0).
Unknown keys are rejected, and every constraint violation names the
offending field path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .denoiser import DenoiserConfig
from .phantom import DegradationConfig
from .selftrain import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration file or field."""


@dataclass(frozen=True)
class PhaseConfig:
    train_steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 3e-3
    eval_every: int = 100


@dataclass(frozen=True)
class PipelineConfig:
    image_size: int = 32
    total_steps: int = 50
    stride: int = 1
    n_paired: int = 100
    n_unpaired: int = 300
    n_test: int = 50
    seed: int = 0
    out_dir: str = "out"
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    teacher: PhaseConfig = field(default_factory=PhaseConfig)
    student: PhaseConfig = field(default_factory=PhaseConfig)

    def train_config(self, phase: PhaseConfig) -> TrainConfig:
        return TrainConfig(
            train_steps=phase.train_steps,
            batch_size=phase.batch_size,
            learning_rate=phase.learning_rate,
            seed=self.seed,
            total_steps=self.total_steps,
            stride=self.stride,
            eval_every=phase.eval_every,
            denoiser=self.denoiser,
        )


_TOP_KEYS = {
    "image_size": int,
    "T": int,
    "stride": int,
    "n_paired": int,
    "n_unpaired": int,
    "n_test": int,
    "seed": int,
    "out_dir": str,
    "degradation": dict,
    "denoiser": dict,
    "teacher": dict,
    "student": dict,
}

_DEGRADATION_KEYS = {"n_views": int, "cupping_amplitude": float, "noise_sigma": float, "contrast_scale": float}
_DENOISER_KEYS = {"base_channels": int, "num_blocks": int, "time_embed_dim": int, "image_channels": int}
_PHASE_KEYS = {"train_steps": int, "batch_size": int, "learning_rate": float, "eval_every": int}


def _check_keys(raw: dict, allowed: dict, prefix: str = "") -> None:
    for key, value in raw.items():
        path = f"{prefix}{key}"
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}'")
        want = allowed[key]
        ok = isinstance(value, want) if want is not float else isinstance(value, (int, float))
        if want is int and isinstance(value, bool):
            ok = False
        if not ok:
            raise ConfigError(f"{path}: expected {want.__name__}, got {type(value).__name__}")


def _positive(raw: dict, keys: list[str], prefix: str = "", minimum: int = 1) -> None:
    for key in keys:
        if key in raw and raw[key] < minimum:
            raise ConfigError(f"{prefix}{key}: must be >= {minimum}")


def parse_config(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be a JSON object")
    _check_keys(raw, _TOP_KEYS)
    _positive(raw, ["n_paired", "n_unpaired", "n_test"], minimum=0)
    _positive(raw, ["stride"])
    if "image_size" in raw and raw["image_size"] < 16:
        raise ConfigError("image_size: must be >= 16")
    if "T" in raw and raw["T"] < 2:
        raise ConfigError("T: must be >= 2")
    total_steps = raw.get("T", 50)
    stride = raw.get("stride", 1)
    if total_steps % stride != 0:
        raise ConfigError(f"stride: stride ({stride}) must divide T ({total_steps})")

    def sub(name: str, allowed: dict, builder):
        section = raw.get(name, {})
        _check_keys(section, allowed, prefix=f"{name}.")
        try:
            return builder(**section)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc

    degradation = sub("degradation", _DEGRADATION_KEYS, DegradationConfig)
    denoiser = sub("denoiser", _DENOISER_KEYS, DenoiserConfig)
    teacher_raw = raw.get("teacher", {})
    student_raw = raw.get("student", {})
    for name, section in (("teacher", teacher_raw), ("student", student_raw)):
        _check_keys(section, _PHASE_KEYS, prefix=f"{name}.")
        _positive(section, ["train_steps"], prefix=f"{name}.", minimum=0)
        _positive(section, ["batch_size", "eval_every"], prefix=f"{name}.")
        if "learning_rate" in section and section["learning_rate"] <= 0:
            raise ConfigError(f"{name}.learning_rate: must be positive")

    return PipelineConfig(
        image_size=raw.get("image_size", 32),
        total_steps=total_steps,
        stride=stride,
        n_paired=raw.get("n_paired", 100),
        n_unpaired=raw.get("n_unpaired", 300),
        n_test=raw.get("n_test", 50),
        seed=raw.get("seed", 0),
        out_dir=raw.get("out_dir", "out"),
        degradation=degradation,
        denoiser=denoiser,
        teacher=PhaseConfig(**teacher_raw),
        student=PhaseConfig(**student_raw),
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)
