"""Flat run configuration with strict validation.

A config is a flat set of scalar knobs. Loading from JSON rejects unknown
keys, and validation stops at the first out-of-range field with a message
naming that field, so a bad config never half-applies.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields

from .errors import ConfigError
from .synthdata import PRESETS


@dataclass
class RunConfig:
    """Every knob of the adaptation pipeline.

    ``n`` is the tier granularity, ``rounds`` the per-paradigm round budget.
    ``eps0`` of None derives the clustering radius from the
    ``eps_percentile``-th percentile of pairwise embedding distances;
    ``eps_decay`` tightens it geometrically per peeling round.
    """

    n: int = 3
    rounds: int = 30
    alpha: float = 0.999
    margin: float = 0.5
    p: int = 16
    k: int = 4
    keep_rate: float = 0.8
    eps0: float | None = None
    eps_decay: float = 0.75
    eps_percentile: float = 1.0
    min_pts: int = 4
    learning_rate: float = 0.05
    steps_per_round: int = 10
    source_steps: int = 300
    finetune_steps: int = 200
    early_stop_patience: int = 10
    selection_uses_ema: bool = True
    consistency_weight: float = 0.5
    repartition: bool = False
    mean_teaching: bool = True
    seed: int = 0
    preset: str = "default-shift"

    def validate(self) -> "RunConfig":
        """Check every field, raising ConfigError at the first violation."""
        checks = [
            ("n", self.n >= 2, "must be at least 2"),
            ("rounds", self.rounds >= 1, "must be at least 1"),
            ("alpha", 0.0 <= self.alpha < 1.0, "must lie in [0, 1)"),
            ("margin", self.margin >= 0.0, "must be nonnegative"),
            ("p", self.p >= 2, "must be at least 2"),
            ("k", self.k >= 2, "must be at least 2"),
            ("keep_rate", 0.0 < self.keep_rate <= 1.0, "must lie in (0, 1]"),
            ("eps0", self.eps0 is None or self.eps0 > 0.0, "must be positive when given"),
            ("eps_decay", 0.0 < self.eps_decay <= 1.0, "must lie in (0, 1]"),
            ("eps_percentile", 0.0 < self.eps_percentile < 100.0, "must lie in (0, 100)"),
            ("min_pts", self.min_pts >= 1, "must be at least 1"),
            ("learning_rate", self.learning_rate > 0.0, "must be positive"),
            ("steps_per_round", self.steps_per_round >= 1, "must be at least 1"),
            ("source_steps", self.source_steps >= 0, "must be nonnegative"),
            ("finetune_steps", self.finetune_steps >= 0, "must be nonnegative"),
            ("early_stop_patience", self.early_stop_patience >= 1, "must be at least 1"),
            ("consistency_weight", self.consistency_weight >= 0.0, "must be nonnegative"),
            ("seed", isinstance(self.seed, int), "must be an integer"),
            ("preset", self.preset in PRESETS, f"must be one of {sorted(PRESETS)}"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ConfigError(f"{name}: {message} (got {getattr(self, name)!r})")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **overrides) -> "RunConfig":
        payload = self.to_dict()
        payload.update(overrides)
        return RunConfig(**payload).validate()

    @staticmethod
    def from_dict(payload: dict) -> "RunConfig":
        known = {f.name for f in fields(RunConfig)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return RunConfig(**payload).validate()

    @staticmethod
    def load(path) -> "RunConfig":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"config file is not valid JSON: {err}") from err
        if not isinstance(payload, dict):
            raise ConfigError("config file must hold a JSON object")
        return RunConfig.from_dict(payload)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def hash(self) -> str:
        """Short stable digest of the full config, stamped onto metric rows."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
