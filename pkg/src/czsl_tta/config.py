"""Engine configuration and dataset presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Switches:
    """Ablation switches. Every combination is valid."""

    enable_queue: bool = True
    enable_textual_kam: bool = True
    enable_visual_kam: bool = True
    enable_auw: bool = True
    warmstart_seen: bool = True
    warmstart_unseen: bool = True
    enable_l_pe: bool = True
    enable_l_mcrl: bool = True

    @classmethod
    def all_off(cls) -> "Switches":
        return cls(**{f.name: False for f in fields(cls)})


@dataclass(frozen=True)
class EngineConfig:
    K: int = 3
    tau: float = 0.01
    tau_M: float = 0.01
    theta: float = 1.0
    alpha: float = 1.0
    beta: float = 15.0
    lambda_mcrl: float = 3.5
    learning_rate: float = 5e-6
    steps_per_sample: int = 1
    optimizer: str = "sgd"
    # divide the fused logits by tau (unscaled by default)
    scale_logits_by_tau: bool = False
    # "refreshed" uses KAM-updated text prototypes for queue admission, "base" the frozen ones
    admission_prototypes: str = "refreshed"
    switches: Switches = field(default_factory=Switches)

    def __post_init__(self):
        if isinstance(self.switches, dict):
            object.__setattr__(self, "switches", Switches(**self.switches))
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.K >= 1, "K must be >= 1"),
            (self.tau > 0, "tau must be > 0"),
            (self.tau_M > 0, "tau_M must be > 0"),
            (self.theta >= 0, "theta must be >= 0"),
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.beta > 0, "beta must be > 0"),
            (self.lambda_mcrl >= 0, "lambda_mcrl must be >= 0"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.steps_per_sample >= 1, "steps_per_sample must be >= 1"),
            (self.optimizer in ("sgd", "adam"), "optimizer must be 'sgd' or 'adam'"),
            (
                self.admission_prototypes in ("refreshed", "base"),
                "admission_prototypes must be 'refreshed' or 'base'",
            ),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **changes: Any) -> "EngineConfig":
        switch_names = {f.name for f in fields(Switches)}
        sw = {k: changes.pop(k) for k in list(changes) if k in switch_names}
        if sw:
            changes["switches"] = dataclasses.replace(self.switches, **sw)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "switches" in data:
            sw_known = {f.name for f in fields(Switches)}
            bad = set(data["switches"]) - sw_known
            if bad:
                raise ConfigError(f"unknown switches: {sorted(bad)}")
            data["switches"] = Switches(**data["switches"])
        return cls(**data)


# Per-dataset hyperparameters reported for the real benchmarks.
PRESETS: dict[str, dict[str, float]] = {
    "ut-zappos": dict(alpha=1.0, beta=15.0, theta=1.0, lambda_mcrl=3.5, learning_rate=5e-6),
    "c-fashion": dict(alpha=0.0625, beta=2.5, theta=3.0, lambda_mcrl=1.25, learning_rate=5e-6),
    "c-gqa": dict(alpha=0.5, beta=5.0, theta=3.0, lambda_mcrl=2.75, learning_rate=1e-5),
    "mit-states": dict(alpha=1.0, beta=3.75, theta=1.5, lambda_mcrl=2.5, learning_rate=1e-5),
    # desk-scale synthetic bundles: same weights as ut-zappos, step size for plain descent
    "synthetic": dict(alpha=1.0, beta=15.0, theta=1.0, lambda_mcrl=3.5, learning_rate=0.1),
}


def preset(name: str, **overrides: Any) -> EngineConfig:
    try:
        values = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return EngineConfig(K=3, **values).replace(**overrides)
