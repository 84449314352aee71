"""Command-line entry point: ``coevolve <subcommand> [options]``.

Exit codes: 0 success, 2 usage or config error, 3 empty curriculum,
4 endpoint transport failure, 5 other phase failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .curation import read_dataset, summarize_records
from .errors import (
    CoevolveError,
    ConfigError,
    EmptyCurriculumError,
    PhaseError,
    RejectedInputError,
    TransportError,
)
from .orchestrator.config import LoopConfig, dump_config, load_config
from .orchestrator.engine import Engine

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_EMPTY_CURRICULUM = 3
EXIT_TRANSPORT = 4
EXIT_PHASE = 5

log = logging.getLogger("coevolve")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="preset name (full, toy-smoke, toy-distractor) or YAML path")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--backend", choices=("toy", "endpoint"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_run(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--output-dir", "-o", default="run", help="run directory (default: ./run)")
    p.add_argument("--resume", default=None, metavar="CHECKPOINT", help="checkpoint dir, or a run dir holding LATEST")
    p.add_argument("--workers", type=int, default=None, help="thread pool size for question-level work")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coevolve", description="Challenger/solver co-evolution loop.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    _add_run(sub.add_parser("loop", help="run every iteration end to end"))
    _add_run(sub.add_parser("challenger-phase", help="run the next challenger phase"))
    _add_run(sub.add_parser("curate", help="run the next curation phase"))
    p = sub.add_parser("solver-phase", help="run the next solver phase")
    _add_run(p)
    p.add_argument("--dataset", default=None, help="train on this dataset file instead of the run's latest one")

    p = sub.add_parser("inspect", help="summarize a dataset file, metrics file, or run directory")
    _add_common(p)
    p.add_argument("path")

    p = sub.add_parser("validate-config", help="load and validate a config")
    _add_common(p)
    p.add_argument("--dump", action="store_true", help="print the resolved config as YAML")
    return parser


def _resolve_config(args) -> LoopConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.backend is not None:
        changes["backend"] = args.backend
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    return cfg.with_overrides(**changes) if changes else cfg


def _load_state(engine: Engine, args):
    """Resume from --resume, else from the run dir's LATEST, else start fresh."""
    if args.resume:
        return engine.resume(args.resume)
    if (engine.out / "checkpoints" / "LATEST").exists():
        return engine.resume(engine.out / "checkpoints")
    return engine.start()


def _summary(engine: Engine, state) -> None:
    done = state.iteration > engine.config.iterations
    where = "finished" if done else f"next: iteration {state.iteration}, {state.next_phase}"
    print(f"run dir: {engine.out} ({where})")
    if state.dataset_path:
        print(f"dataset: {engine.out / state.dataset_path}")
    print(f"metrics: {engine.out / state.metrics_path}")


def cmd_loop(args) -> int:
    engine = Engine(_resolve_config(args), args.output_dir)
    state, _ = engine.run_loop(resume=args.resume)
    _summary(engine, state)
    return EXIT_OK


def _one_phase(args, phase: str) -> int:
    engine = Engine(_resolve_config(args), args.output_dir)
    state = _load_state(engine, args)
    dataset = None
    if phase == "solver" and args.dataset:
        dataset = [r for r in read_dataset(Path(args.dataset)) if r.kept]
        state.next_phase = "solver"
    if state.iteration > engine.config.iterations:
        print(f"run in {engine.out} already completed {engine.config.iterations} iteration(s)", file=sys.stderr)
        return EXIT_USAGE
    if state.next_phase != phase:
        print(f"the run's next phase is {state.next_phase!r}, not {phase!r}", file=sys.stderr)
        return EXIT_USAGE
    state, _ = engine.step(state, dataset)
    _summary(engine, state)
    return EXIT_OK


def _describe_metrics(rows: list[dict]) -> None:
    for r in rows:
        bits = [f"iter {r['iteration']}", r["phase"], r.get("status", "ok")]
        if r["phase"] == "curation":
            bits.append(
                f"valid={r['valid_questions']} kept={r['kept']} too_easy={r['too_easy']} too_hard={r['too_hard']}"
            )
            if r.get("pseudo_label_true_accuracy") is not None:
                bits.append(f"label_acc={r['pseudo_label_true_accuracy']:.3f}")
        if r.get("mean_composite") is not None:
            bits.append(f"composite={r['mean_composite']:.4f}")
        if r.get("mean_solver_reward") is not None:
            bits.append(f"solver_reward={r['mean_solver_reward']:.4f}")
        if r.get("solver_mean_accuracy") is not None:
            bits.append(f"solver_acc={r['solver_mean_accuracy']:.4f}")
        print("  ".join(bits))


def _describe_dataset(path: Path) -> None:
    stats = summarize_records(read_dataset(path))
    print(f"{path}: total={stats['total']} kept={stats['kept']} too_easy={stats['too_easy']} too_hard={stats['too_hard']}")


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        for ds in sorted((path / "datasets").glob("*.jsonl")):
            _describe_dataset(ds)
        if (path / "metrics.jsonl").exists():
            _describe_metrics(_read_jsonl(path / "metrics.jsonl"))
        return EXIT_OK
    if not path.is_file():
        raise ConfigError(f"{path} does not exist")
    with open(path, encoding="utf-8") as fh:
        first = json.loads(fh.readline() or "{}")
    if first.get("kind") == "coevolve-dataset":
        _describe_dataset(path)
    elif "phase" in first:
        _describe_metrics(_read_jsonl(path))
    else:
        raise ConfigError(f"{path} is neither a dataset nor a metrics file")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _resolve_config(args)
    if args.dump:
        sys.stdout.write(dump_config(cfg))
    print(f"ok: config hash {cfg.digest()}")
    return EXIT_OK


COMMANDS = {
    "loop": cmd_loop,
    "challenger-phase": lambda a: _one_phase(a, "challenger"),
    "curate": lambda a: _one_phase(a, "curation"),
    "solver-phase": lambda a: _one_phase(a, "solver"),
    "inspect": cmd_inspect,
    "validate-config": cmd_validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, RejectedInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyCurriculumError as exc:
        print(f"empty curriculum: {exc}", file=sys.stderr)
        return EXIT_EMPTY_CURRICULUM
    except PhaseError as exc:
        cause = exc.__cause__
        if isinstance(cause, TransportError):
            print(f"endpoint failure during {exc.phase}: {cause}", file=sys.stderr)
            return EXIT_TRANSPORT
        print(f"phase failure: {exc}", file=sys.stderr)
        return EXIT_PHASE
    except TransportError as exc:
        print(f"endpoint failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except CoevolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
