"""Loop configuration: dataclasses mirrored 1:1 by the YAML config files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from ..backends.endpoint import EndpointConfig
from ..backends.toy import ToyWorld
from ..errors import ConfigError, RejectedInputError
from ..grpo import GrpoConfig

PRESETS = ("full", "toy-smoke", "toy-distractor")


@dataclass
class PhaseConfig:
    steps: int = 5
    group_size: int = 4
    batch: int = 128
    learning_rate: float = 1e-6
    kl_coeff: float = 1e-2
    clip_eps: float = 0.2
    eps_norm: float = 1e-6

    def grpo(self) -> GrpoConfig:
        return GrpoConfig(
            eps_norm=self.eps_norm,
            clip_eps=self.clip_eps,
            kl_coeff=self.kl_coeff,
            learning_rate=self.learning_rate,
            group_size=self.group_size,
        )

    def validate(self, name: str) -> None:
        if self.steps < 0:
            raise ConfigError(f"{name}.steps must be >= 0")
        if self.batch < 1:
            raise ConfigError(f"{name}.batch must be >= 1")
        try:
            self.grpo()
        except RejectedInputError as exc:
            raise ConfigError(f"{name}: {exc}") from None


@dataclass
class Ablations:
    train_challenger: bool = True
    filter_enabled: bool = True
    rep_penalty_enabled: bool = True


@dataclass
class ToyConfig:
    procedures_per_level: list = field(default_factory=lambda: [2, 3, 5, 8])
    solver_skill: list = field(default_factory=lambda: [1.0, 0.5, 0.0, -0.5])
    solver_lure: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    operand_low: int = 2
    operand_high: int = 99

    def world(self) -> ToyWorld:
        try:
            return ToyWorld(
                procedures_per_level=tuple(int(p) for p in self.procedures_per_level),
                solver_skill=tuple(float(x) for x in self.solver_skill),
                solver_lure=tuple(float(x) for x in self.solver_lure),
                operand_low=int(self.operand_low),
                operand_high=int(self.operand_high),
            )
        except RejectedInputError as exc:
            raise ConfigError(f"toy: {exc}") from None


@dataclass
class EndpointSection:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "default"
    api_key_source: str = "COEVOLVE_API_KEY"
    temperature: float = 1.0
    top_p: float = 0.99
    max_in_flight: int = 8
    timeout: float = 120.0
    retry: dict = field(default_factory=lambda: {"max_attempts": 3, "backoff": 0.5})

    def endpoint(self) -> EndpointConfig:
        return EndpointConfig.from_dict(dataclasses.asdict(self))


@dataclass
class LoopConfig:
    iterations: int = 3
    pool_size: int = 8000
    vote_samples: int = 10
    band_delta: float = 0.25
    rep_lambda: float = 1.0
    bleu_threshold: float = 0.5
    # "step": penalise repeats across all generations of a challenger step;
    # "group": only within each rollout group
    rep_batch: str = "step"
    reuse_uncertainty_samples: bool = False
    challenger: PhaseConfig = field(default_factory=lambda: PhaseConfig(steps=5, group_size=4))
    solver: PhaseConfig = field(default_factory=lambda: PhaseConfig(steps=15, group_size=5))
    ablations: Ablations = field(default_factory=Ablations)
    shared_policy: bool = False
    seed: int = 0
    backend: str = "toy"
    workers: int = 1
    export_rollouts: bool = False
    toy: ToyConfig = field(default_factory=ToyConfig)
    endpoint: EndpointSection = field(default_factory=EndpointSection)

    def validate(self) -> "LoopConfig":
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")
        if self.vote_samples < 1:
            raise ConfigError("vote_samples must be >= 1")
        if not 0 <= self.band_delta <= 0.5:
            raise ConfigError("band_delta must lie in [0, 0.5]")
        if self.rep_lambda < 0:
            raise ConfigError("rep_lambda must be >= 0")
        if not 0 <= self.bleu_threshold <= 1:
            raise ConfigError("bleu_threshold must lie in [0, 1]")
        if self.rep_batch not in ("step", "group"):
            raise ConfigError("rep_batch must be 'step' or 'group'")
        if self.backend not in ("toy", "endpoint"):
            raise ConfigError("backend must be 'toy' or 'endpoint'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.shared_policy and self.backend != "toy":
            raise ConfigError("shared_policy requires both backends to be trainable (toy)")
        self.challenger.validate("challenger")
        self.solver.validate("solver")
        self.toy.world()
        self.endpoint.endpoint()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of every field that affects results (not output/perf knobs)."""
        data = self.to_dict()
        data.pop("workers")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **changes) -> "LoopConfig":
        return from_dict(_merge(self.to_dict(), changes))


def _merge(base: dict, changes: dict) -> dict:
    out = dict(base)
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("retry",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {path or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


_NESTED = {
    (LoopConfig, "challenger"): PhaseConfig,
    (LoopConfig, "solver"): PhaseConfig,
    (LoopConfig, "ablations"): Ablations,
    (LoopConfig, "toy"): ToyConfig,
    (LoopConfig, "endpoint"): EndpointSection,
}


def _coerce_types(cfg: LoopConfig) -> LoopConfig:
    # YAML may hand back ints for float fields ("lr: 1") and vice versa
    def fix(obj):
        for f in fields(obj):
            val = getattr(obj, f.name)
            if dataclasses.is_dataclass(val):
                fix(val)
            elif f.type in ("float",) and isinstance(val, (int, float)) and not isinstance(val, bool):
                setattr(obj, f.name, float(val))
            elif f.type in ("int",) and not isinstance(val, int):
                raise ConfigError(f"{f.name} must be an integer, got {val!r}")
            elif f.type in ("bool",) and not isinstance(val, bool):
                raise ConfigError(f"{f.name} must be true/false, got {val!r}")

    fix(cfg)
    return cfg


def from_dict(data: dict) -> LoopConfig:
    return _coerce_types(_build(LoopConfig, data, "")).validate()


def load_preset(name: str) -> LoopConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("coevolve").joinpath("presets", f"{name}.yaml").read_text()
    return from_dict(yaml.safe_load(text) or {})


def load_config(source: Optional[str | Path] = None) -> LoopConfig:
    """Load a preset by name, a YAML file by path, or the defaults when ``None``."""
    if source is None:
        return LoopConfig().validate()
    if str(source) in PRESETS:
        return load_preset(str(source))
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"config {source!r} is neither a preset nor a file")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data or {})


def dump_config(cfg: LoopConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
