"""Run-time configuration.

All numeric defaults live in ``data/defaults.json``; :func:`load_config`
layers a user file and keyword overrides on top of it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass(frozen=True)
class Config:
    alpha: float = 0.1
    beta: float = 1e-3
    clip_eps: float = 0.2
    group_size: int = 8
    t_max: int = 8
    context_budget: int = 4096
    response_budget: int = 16384
    buffer_size: int = 1000
    lo_pct: float = 5.0
    hi_pct: float = 95.0
    warmup: int = 30
    eta: float = 0.05
    gamma_discount: float = 1.0
    gamma_progress: float = 1.0
    eps_num: float = 1e-8
    qa_threshold: float = 0.5
    qa_score: str = "max"
    retries: int = 2
    timeout: float = 60.0
    max_in_flight: int = 8
    blind: bool = True
    pass1_mode: str = "first"
    kl_ratio: str = "reference"
    # recorded for the external trainer; nothing here consumes them
    learning_rate: float = 1e-6
    sft_learning_rate: float = 2e-5
    sft_epochs: int = 2
    sft_warmup_steps: int = 100

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.context_budget <= 0:
            raise ConfigError("context_budget must be positive")
        if not 0.0 < self.eta <= 0.2:
            raise ConfigError(f"eta must lie in (0, 0.2], got {self.eta}")
        if not 0.0 < self.gamma_discount <= 1.0:
            raise ConfigError("gamma_discount must lie in (0, 1]")
        if not self.lo_pct < self.hi_pct:
            raise ConfigError("lo_pct must be below hi_pct")
        if self.buffer_size < 1:
            raise ConfigError("buffer_size must be >= 1")
        if self.pass1_mode not in ("first", "mean"):
            raise ConfigError("pass1_mode must be 'first' or 'mean'")
        if self.qa_score not in ("max", "f1"):
            raise ConfigError("qa_score must be 'max' or 'f1'")
        if self.kl_ratio not in ("reference", "behaviour"):
            raise ConfigError("kl_ratio must be 'reference' or 'behaviour'")

    def replace(self, **changes: Any) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _defaults() -> dict[str, Any]:
    text = resources.files("orchestra").joinpath("data/defaults.json").read_text("utf-8")
    return json.loads(text)


def load_config(path: str | Path | None = None, **overrides: Any) -> Config:
    values = _defaults()
    if path is not None:
        try:
            values.update(json.loads(Path(path).read_text("utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(Config)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return Config(**values)
