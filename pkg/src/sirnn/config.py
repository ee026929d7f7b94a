from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

MODES = ("sirnn", "dynamic")
JOINT_RULES = ("sum", "logmean")


@dataclass
class TrainConfig:
    """Model shape and optimisation settings. Defaults follow the published setup."""

    mode: str = "sirnn"
    shared_igrus: bool = False
    no_joint_selection: bool = False
    joint_rule: str = "sum"
    use_bias: bool = False
    d_s: int = 50
    d_u: int = 50
    d_w: int = 300
    max_tokens: int = 20
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l2: float = 0.001
    batch_size: int = 128
    max_epochs: int = 30
    patience: int | None = 5
    init_range: float = 0.01
    grad_clip: float | None = None
    seed: int = 0
    context_length: int = 15
    res_cand: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.joint_rule not in JOINT_RULES:
            raise ValueError(f"joint_rule must be one of {JOINT_RULES}, got {self.joint_rule!r}")
        for name in ("d_s", "d_u", "d_w", "max_tokens", "batch_size", "max_epochs",
                     "context_length", "res_cand"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("learning_rate", "adam_eps", "init_range"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.patience is not None and not 0 < self.patience <= self.max_epochs:
            raise ValueError("patience must be in (0, max_epochs] or None")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, strict: bool = False) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if strict and unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
