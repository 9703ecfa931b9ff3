"""Pipeline configuration.

A flat set of keys, loaded from YAML and overridable by environment
variables named ``HOIMOTION_<KEY>`` (upper case).  Unknown keys are
rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

ENV_PREFIX = "HOIMOTION_"
# keys that locate artifacts rather than change them
_UNHASHED = {"out_dir", "llm_fixtures"}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # data
    seed: int = 0
    n_clips: int = 64
    scenario: str | None = None
    clip_len: int = 100
    fps: float = 30.0
    n_points: int = 256
    n_basis: int = 128
    basis_radius: float = 1.0
    test_fraction: float = 0.25
    # affordance / contact
    sigma: float = 0.2
    tau: float = 0.10
    # diffusion
    T: int = 300
    lr: float = 2e-4
    batch_size: int = 16
    n_head: int = 4
    stage1_d: int = 64
    stage1_layers: int = 2
    stage1_steps: int = 2000
    stage2_d: int = 128
    stage2_layers: int = 4
    cond_d: int = 64
    base_steps: int = 1500
    controlnet_steps: int = 1000
    # guidance
    joint_guidance: bool = True
    foot_guidance: bool = True
    alpha: float = 1.0
    beta: float = 1.0
    h_g: float = 0.02
    lbfgs_iters: int = 5
    # evaluation
    evaluator_steps: int = 600
    diversity_pairs: int = 300
    r_batch: int = 32
    # annotation
    llm_backend: str = "template"
    llm_fixtures: str | None = None
    # paths
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("n_clips", "clip_len", "fps", "n_points", "n_basis", "basis_radius", "sigma", "tau",
                    "T", "lr", "batch_size", "n_head", "stage1_d", "stage2_d", "cond_d", "r_batch")  # fmt: skip
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)!r}")
        for key in ("stage1_steps", "base_steps", "controlnet_steps", "evaluator_steps", "lbfgs_iters",
                    "alpha", "beta", "diversity_pairs"):  # fmt: skip
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must be in [0, 1)")
        if self.scenario not in (None, "carry", "push", "lift-rotate-place"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.llm_backend not in ("template", "recorded", "http", "echo"):
            raise ConfigError(f"unknown llm_backend {self.llm_backend!r}")
        for d in ("stage1_d", "stage2_d", "cond_d"):
            if getattr(self, d) % self.n_head:
                raise ConfigError(f"{d} must be divisible by n_head")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        unknown = set(data) - set(cls.keys())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        typed = {k: _coerce(cls, k, v) for k, v in data.items()}
        try:
            return cls(**typed)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, overrides: dict | None = None, env=None) -> "PipelineConfig":
        data = {}
        if path is not None:
            try:
                data = yaml.safe_load(Path(path).read_text()) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a mapping")
        env = os.environ if env is None else env
        for key in cls.keys():
            name = ENV_PREFIX + key.upper()
            if name in env:
                data[key] = env[name]
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @property
    def hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def _coerce(cls, key, value):
    ftype = {f.name: f.type for f in fields(cls)}[key]
    if value is None or not isinstance(value, str):
        if ftype.startswith("int") and isinstance(value, float):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        if "float" in str(ftype) and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    text = value.strip()
    try:
        if ftype.startswith("bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if ftype.startswith("int"):
            return int(text)
        if ftype.startswith("float"):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if "None" in ftype and text.lower() in ("", "none", "null"):
        return None
    return text
