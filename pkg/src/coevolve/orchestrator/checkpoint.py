"""Per-phase checkpoints: one directory each, written atomically."""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..errors import ConfigError
from ..grpo import CategoricalPolicy

PHASES = ("challenger", "curation", "solver")
CHECKPOINT_VERSION = 1


@dataclass
class IterationState:
    """Where the loop stands: the next phase to run and both policy snapshots.

    ``iteration`` is 1-based; a state with ``iteration > T`` is finished.
    Paths are relative to the run's output directory.  In shared-policy mode
    both attributes refer to the same policy object.
    """

    iteration: int
    next_phase: str
    challenger_policy: Optional[CategoricalPolicy]
    solver_policy: Optional[CategoricalPolicy]
    dataset_path: Optional[str] = None
    metrics_path: str = "metrics.jsonl"
    metrics_lines: int = 0
    shared: bool = False

    def to_json(self, config_hash: str, seed: int) -> dict:
        shared = self.shared
        return {
            "checkpoint_version": CHECKPOINT_VERSION,
            "iteration": self.iteration,
            "next_phase": self.next_phase,
            "config_hash": config_hash,
            "rng": {"seed": seed, "stream": "SeedSequence([seed, iteration, phase, step, item])"},
            "shared_policy": shared,
            "challenger_policy": None if self.challenger_policy is None else self.challenger_policy.to_dict(),
            "solver_policy": None
            if self.solver_policy is None or shared
            else self.solver_policy.to_dict(),
            "dataset_path": self.dataset_path,
            "metrics_path": self.metrics_path,
            "metrics_lines": self.metrics_lines,
        }

    @classmethod
    def from_json(cls, data: dict) -> "IterationState":
        if data.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {data.get('checkpoint_version')!r}")
        shared = bool(data["shared_policy"])
        chal = data["challenger_policy"]
        chal = None if chal is None else CategoricalPolicy.from_dict(chal)
        solv = chal if shared else (None if data["solver_policy"] is None else CategoricalPolicy.from_dict(data["solver_policy"]))
        return cls(
            iteration=data["iteration"],
            next_phase=data["next_phase"],
            challenger_policy=chal,
            solver_policy=solv,
            dataset_path=data["dataset_path"],
            metrics_path=data["metrics_path"],
            metrics_lines=data["metrics_lines"],
            shared=shared,
        )


def checkpoint_name(iteration: int, phase: str) -> str:
    return f"iter{iteration:03d}-{PHASES.index(phase)}-{phase}"


def write_checkpoint(root: Path, name: str, payload: dict) -> Path:
    """Write ``state.json`` into ``root/name`` via a temp dir + rename."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    final = root / name
    tmp = Path(tempfile.mkdtemp(dir=root, prefix=f".{name}."))
    try:
        (tmp / "state.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    (root / "LATEST").write_text(name + "\n")
    return final


def read_checkpoint(path: Path) -> dict:
    path = Path(path)
    if path.is_dir() and (path / "LATEST").exists():
        path = path / (path / "LATEST").read_text().strip()
    state_file = path / "state.json" if path.is_dir() else path
    if not state_file.is_file():
        raise ConfigError(f"no checkpoint found at {path}")
    return json.loads(state_file.read_text())
