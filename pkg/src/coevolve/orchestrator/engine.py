"""The co-evolution loop: challenger phase, curation, solver phase, repeat."""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..backends.base import Generation, GeneratorBackend, SolverBackend
from ..backends.endpoint import EndpointChallenger, EndpointSolver
from ..backends.toy import CHALLENGER_STATE, ToyChallenger, ToySolver, ToyWorld
from ..challenger_reward import check_format, score_batch
from ..curation import (
    CurationRecord,
    atomic_write_text,
    build_dataset,
    majority_vote,
    read_dataset,
    solver_reward,
    write_dataset,
)
from ..errors import CoevolveError, ConfigError, EmptyCurriculumError, PhaseError
from ..grpo import CategoricalPolicy, ResponseSample, RolloutGroup, grpo_step
from .checkpoint import IterationState, checkpoint_name, read_checkpoint, write_checkpoint
from .config import LoopConfig

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "iteration",
    "phase",
    "status",
    "valid_questions",
    "invalid_questions",
    "kept",
    "too_easy",
    "too_hard",
    "mean_composite",
    "mean_uncertainty",
    "mean_rep_penalty",
    "mean_uncertainty_before",
    "mean_uncertainty_after",
    "mean_solver_reward",
    "p_hat_histogram",
    "challenger_distribution",
    "solver_accuracy",
    "solver_mean_accuracy",
    "pseudo_label_true_accuracy",
    "pseudo_label_true_accuracy_all",
    "answers_per_question",
    "loss_reports",
    "step_rewards",
    "challenger_hash",
    "solver_hash",
    "dataset_path",
)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _mean(xs: Sequence[float]) -> Optional[float]:
    return float(np.mean(xs)) if len(xs) else None


class Engine:
    """Runs the loop for one config in one output directory.

    Backends default to the ones named by ``config.backend``; pass explicit
    instances to plug in others.
    """

    def __init__(
        self,
        config: LoopConfig,
        output_dir: str | Path,
        challenger: Optional[GeneratorBackend] = None,
        solver: Optional[SolverBackend] = None,
    ):
        self.config = config.validate()
        self.out = Path(output_dir)
        self.world: Optional[ToyWorld] = config.toy.world() if config.backend == "toy" else None
        if config.backend == "toy":
            self.challenger = challenger or ToyChallenger(self.world)
            self.solver = solver or ToySolver(self.world)
        else:
            endpoint = config.endpoint.endpoint()
            if challenger is None or solver is None:
                endpoint.api_key()  # fail before any phase starts
            limiter = threading.BoundedSemaphore(endpoint.max_in_flight)
            self.challenger = challenger or EndpointChallenger(endpoint, limiter)
            self.solver = solver or EndpointSolver(endpoint, limiter)
        if config.shared_policy and not (self.challenger.trainable and self.solver.trainable):
            raise ConfigError("shared_policy requires both backends to be trainable")
        self.config_hash = config.digest()

    # -- state ---------------------------------------------------------

    def initial_state(self) -> IterationState:
        chal = solv = None
        if self.world is not None:
            chal = self.world.initial_challenger_policy()
            solv = self.world.initial_solver_policy()
            if self.config.shared_policy:
                chal = solv = CategoricalPolicy({**chal.to_dict(), **solv.to_dict()})
        return IterationState(
            iteration=1,
            next_phase="challenger",
            challenger_policy=chal,
            solver_policy=solv,
            shared=self.config.shared_policy,
        )

    def _metrics_file(self, state: IterationState) -> Path:
        return self.out / state.metrics_path

    def _emit(self, state: IterationState, record: dict) -> None:
        path = self._metrics_file(state)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
        state.metrics_lines += 1

    def _record(self, state: IterationState, phase: str, status: str = "ok") -> dict:
        rec = dict.fromkeys(METRIC_FIELDS)
        rec.update(iteration=state.iteration, phase=phase, status=status)
        return rec

    def _snapshot(self, rec: dict, state: IterationState) -> None:
        rec["challenger_hash"] = state.challenger_policy.digest() if state.challenger_policy else None
        rec["solver_hash"] = state.solver_policy.digest() if state.solver_policy else None
        if self.world is not None:
            acc = self.world.solver_accuracy(state.solver_policy)
            rec["solver_accuracy"] = acc.tolist()
            rec["solver_mean_accuracy"] = float(acc.mean())
            rec["challenger_distribution"] = state.challenger_policy.probs(CHALLENGER_STATE).tolist()

    def _checkpoint(self, state: IterationState, phase: str, iteration: Optional[int] = None) -> Path:
        payload = state.to_json(self.config_hash, self.config.seed)
        name = checkpoint_name(state.iteration if iteration is None else iteration, phase)
        return write_checkpoint(self.out / "checkpoints", name, payload)

    def _set_policy(self, state: IterationState, role: str, policy: CategoricalPolicy) -> None:
        if state.shared:
            state.challenger_policy = state.solver_policy = policy
        elif role == "challenger":
            state.challenger_policy = policy
        else:
            state.solver_policy = policy

    def _fan_out(self, fn: Callable, items: Sequence) -> list:
        if self.config.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def _cache_path(self, t: int) -> Path:
        return self.out / "cache" / f"iter{t:03d}-votes.json"

    def _export(self, name: str, rows: list[dict]) -> None:
        text = "".join(json.dumps(r) + "\n" for r in rows)
        atomic_write_text(self.out / "rollouts" / name, text)

    # -- challenger ----------------------------------------------------

    def _vote_accuracies(
        self, texts: Sequence[Optional[str]], solver_policy, key: tuple[int, ...], cache: Optional[dict]
    ) -> list[Optional[float]]:
        votes = self.config.vote_samples
        seed = self.config.seed

        def one(i):
            text = texts[i]
            if text is None:
                return None
            answers = [a.text for a in self.solver.sample_answers(text, votes, _rng(seed, *key, i), solver_policy)]
            return majority_vote(answers, votes).p_hat, answers

        results = self._fan_out(one, range(len(texts)))
        if cache is not None:
            for text, res in zip(texts, results):
                if res is not None:
                    cache.setdefault(text, res[1])
        return [None if res is None else res[0] for res in results]

    def _score(self, gens: Sequence[Generation], solver_policy, key, cache=None):
        cfg = self.config
        checks = [check_format(g.text) for g in gens]
        texts = [c.question_text if c.ok else None for c in checks]
        accs = self._vote_accuracies(texts, solver_policy, key, cache)
        kwargs = dict(lam=cfg.rep_lambda, tau=cfg.bleu_threshold, rep_penalty_enabled=cfg.ablations.rep_penalty_enabled)
        if cfg.rep_batch == "step":
            breakdowns = score_batch([g.text for g in gens], accs, checks=checks, **kwargs)
        else:
            size = cfg.challenger.group_size
            breakdowns = []
            for s in range(0, len(gens), size):
                breakdowns += score_batch(
                    [g.text for g in gens[s : s + size]], accs[s : s + size], checks=checks[s : s + size], **kwargs
                )
        return breakdowns, accs

    def _probe_uncertainty(self, policy, solver_policy, key) -> Optional[float]:
        pc = self.config.challenger
        gens = self.challenger.sample_questions(pc.batch * pc.group_size, _rng(self.config.seed, *key), policy)
        breakdowns, _ = self._score(gens, solver_policy, key)
        return _mean([b.r_uncertainty for b in breakdowns if b.format_ok])

    def run_challenger_phase(self, state: IterationState) -> IterationState:
        cfg, pc = self.config, self.config.challenger
        t = state.iteration
        if state.next_phase != "challenger":
            raise PhaseError(f"expected next phase 'challenger', state says {state.next_phase!r}", phase="challenger", iteration=t)
        if not cfg.ablations.train_challenger:
            self._cache_path(t).unlink(missing_ok=True)
            rec = self._record(state, "challenger", status="skipped")
            self._snapshot(rec, state)
            self._emit(state, rec)
            state.next_phase = "curation"
            self._checkpoint(state, "challenger")
            return state

        rec = self._record(state, "challenger")
        trainable = self.challenger.trainable
        policy = start_policy = state.challenger_policy
        size = pc.group_size
        n = pc.batch * size
        losses, comps, uncs, reps, step_rewards, export = [], [], [], [], [], []
        self._uncertainty_cache = {} if cfg.reuse_uncertainty_samples else None
        for step in range(pc.steps):
            try:
                gens = self.challenger.sample_questions(n, _rng(cfg.seed, t, 1, step), policy)
                breakdowns, accs = self._score(gens, state.solver_policy, (t, 1, step), self._uncertainty_cache)
            except CoevolveError as exc:
                raise PhaseError(f"challenger phase, step {step}: {exc}", "challenger", t, step) from exc
            rewards = [b.composite for b in breakdowns]
            valid = [b for b in breakdowns if b.format_ok]
            comps.append(_mean(rewards))
            uncs.append(_mean([b.r_uncertainty for b in valid]))
            reps.append(_mean([b.r_rep for b in valid]))
            step_rewards.append(comps[-1])
            if trainable:
                groups = [
                    RolloutGroup(
                        f"it{t}-s{step}-g{g}",
                        [ResponseSample(x.text, x.action_path, x.logprob) for x in gens[g * size : (g + 1) * size]],
                        rewards[g * size : (g + 1) * size],
                    )
                    for g in range(pc.batch)
                ]
                policy, report = grpo_step(policy, groups, pc.grpo())
                self._set_policy(state, "challenger", policy)
                losses.append(report.to_dict())
            else:
                for i, (g, b, a) in enumerate(zip(gens, breakdowns, accs)):
                    export.append({"iteration": t, "step": step, "group": i // size, "text": g.text, "p_hat": a, **b.to_dict()})

        if self._uncertainty_cache is not None:
            atomic_write_text(self._cache_path(t), json.dumps(self._uncertainty_cache))
        if trainable and pc.steps:
            # frontier tracking: score the old and new policy on one shared random stream
            key = (t, 1, pc.steps)
            rec["mean_uncertainty_before"] = self._probe_uncertainty(start_policy, state.solver_policy, key)
            rec["mean_uncertainty_after"] = self._probe_uncertainty(policy, state.solver_policy, key)
        if export:
            self._export(f"iter{t:03d}-challenger.jsonl", export)
            rec["status"] = "export-only"
        rec.update(
            mean_composite=_mean([c for c in comps if c is not None]),
            mean_uncertainty=uncs[0] if uncs else None,
            mean_rep_penalty=_mean([r for r in reps if r is not None]),
            loss_reports=losses,
            step_rewards=step_rewards,
        )
        self._snapshot(rec, state)
        self._emit(state, rec)
        state.next_phase = "curation"
        self._checkpoint(state, "challenger")
        return state

    # -- curation ------------------------------------------------------

    def run_curation_phase(self, state: IterationState) -> tuple[IterationState, list[CurationRecord]]:
        cfg = self.config
        t = state.iteration
        if state.next_phase != "curation":
            raise PhaseError(f"expected next phase 'curation', state says {state.next_phase!r}", phase="curation", iteration=t)
        votes = cfg.vote_samples
        try:
            gens = self.challenger.sample_questions(cfg.pool_size, _rng(cfg.seed, t, 2), state.challenger_policy)
        except CoevolveError as exc:
            raise PhaseError(f"curation phase: {exc}", "curation", t) from exc
        checks = [check_format(g.text) for g in gens]
        valid = [(i, c.question_text) for i, c in enumerate(checks) if c.ok]
        cache = None
        if cfg.reuse_uncertainty_samples and self._cache_path(t).exists():
            cache = json.loads(self._cache_path(t).read_text(encoding="utf-8"))

        def answers_for(item):
            j, (i, text) = item
            if cache is not None and text in cache:
                return cache[text]
            got = self.solver.sample_answers(text, votes, _rng(cfg.seed, t, 2, 0, j), state.solver_policy)
            return [a.text for a in got]

        try:
            answer_lists = self._fan_out(answers_for, list(enumerate(valid)))
        except CoevolveError as exc:
            raise PhaseError(f"curation phase: {exc}", "curation", t) from exc
        pool = [(f"it{t:03d}-q{i:05d}", text, answers) for (i, text), answers in zip(valid, answer_lists)]
        records, kept, stats = build_dataset(
            pool, cfg.band_delta, cfg.ablations.filter_enabled, iteration=t
        )
        rel = f"datasets/iter{t:03d}.jsonl"
        write_dataset(self.out / rel, records)

        rec = self._record(state, "curation")
        rec.update(
            valid_questions=len(valid),
            invalid_questions=len(gens) - len(valid),
            kept=stats.kept,
            too_easy=stats.too_easy,
            too_hard=stats.too_hard,
            p_hat_histogram=stats.p_hat_histogram,
            dataset_path=rel,
        )
        if self.world is not None:
            truth = {r.question_id: self.world.true_answer(r.question_text) for r in records}
            hit = [r.pseudo_label == truth[r.question_id] for r in kept]
            rec["pseudo_label_true_accuracy"] = _mean(hit)
            rec["pseudo_label_true_accuracy_all"] = _mean([r.pseudo_label == truth[r.question_id] for r in records])
        self._snapshot(rec, state)
        self._emit(state, rec)
        state.dataset_path = rel
        if not kept:
            self._checkpoint(state, "curation")
            raise EmptyCurriculumError(
                f"iteration {t}: curation kept 0 of {len(valid)} valid questions "
                f"(too_easy={stats.too_easy}, too_hard={stats.too_hard})"
            )
        state.next_phase = "solver"
        self._checkpoint(state, "curation")
        return state, kept

    # -- solver --------------------------------------------------------

    def run_solver_phase(self, state: IterationState, dataset: Optional[Sequence[CurationRecord]] = None) -> IterationState:
        cfg, ps = self.config, self.config.solver
        t = state.iteration
        if state.next_phase != "solver":
            raise PhaseError(f"expected next phase 'solver', state says {state.next_phase!r}", phase="solver", iteration=t)
        if dataset is None:
            if state.dataset_path is None:
                raise PhaseError("solver phase needs a dataset", "solver", t)
            dataset = [r for r in read_dataset(self.out / state.dataset_path) if r.kept]
        if not dataset:
            raise EmptyCurriculumError(f"iteration {t}: solver phase received an empty dataset")

        trainable = self.solver.trainable
        policy = state.solver_policy
        size = ps.group_size
        losses, step_rewards, export = [], [], []
        n_answers = set()
        for step in range(ps.steps):
            rng = _rng(cfg.seed, t, 3, step)
            reps = -(-ps.batch // len(dataset))
            order = np.concatenate([rng.permutation(len(dataset)) for _ in range(reps)])[: ps.batch]

            def rollout(item):
                b, j = item
                row = dataset[j]
                gens = self.solver.sample_answers(row.question_text, size, _rng(cfg.seed, t, 3, step, b), policy)
                return row, gens, [float(solver_reward(g.text, row.pseudo_label)) for g in gens]

            try:
                results = self._fan_out(rollout, list(enumerate(order.tolist())))
            except CoevolveError as exc:
                raise PhaseError(f"solver phase, step {step}: {exc}", "solver", t, step) from exc
            step_rewards.append(_mean([r for _, _, rs in results for r in rs]))
            for row, gens, rs in results:
                n_answers.add(len(gens))
            if trainable:
                groups = [
                    RolloutGroup(row.question_id, [ResponseSample(g.text, g.action_path, g.logprob) for g in gens], rs)
                    for row, gens, rs in results
                ]
                policy, report = grpo_step(policy, groups, ps.grpo())
                self._set_policy(state, "solver", policy)
                losses.append(report.to_dict())
            else:
                for row, gens, rs in results:
                    for g, r in zip(gens, rs):
                        export.append({"iteration": t, "step": step, "question_id": row.question_id,
                                       "pseudo_label": str(row.pseudo_label), "text": g.text, "reward": r})

        rec = self._record(state, "solver", status="ok" if trainable else "export-only")
        if export:
            self._export(f"iter{t:03d}-solver.jsonl", export)
        rec.update(
            mean_solver_reward=_mean([r for r in step_rewards if r is not None]),
            step_rewards=step_rewards,
            loss_reports=losses,
            answers_per_question=sorted(n_answers)[0] if len(n_answers) == 1 else sorted(n_answers),
        )
        self._snapshot(rec, state)
        self._emit(state, rec)
        state.next_phase = "challenger"
        state.iteration += 1
        self._checkpoint(state, "solver", iteration=t)
        return state

    # -- loop ----------------------------------------------------------

    def start(self) -> IterationState:
        """Fresh state: clears old metrics and writes the iteration-0 record."""
        state = self.initial_state()
        self.out.mkdir(parents=True, exist_ok=True)
        metrics = self._metrics_file(state)
        if metrics.exists():
            metrics.unlink()
        (self.out / "config.hash").write_text(self.config_hash + "\n")
        rec = self._record(state, "init")
        rec["iteration"] = 0
        self._snapshot(rec, state)
        self._emit(state, rec)
        return state

    def resume(self, checkpoint: str | Path) -> IterationState:
        data = read_checkpoint(Path(checkpoint))
        if data["config_hash"] != self.config_hash:
            raise ConfigError(
                f"checkpoint was written by config {data['config_hash']}, current config is {self.config_hash}"
            )
        state = IterationState.from_json(data)
        # drop metrics appended after the checkpoint was taken
        path = self._metrics_file(state)
        lines = path.read_text(encoding="utf-8").splitlines(keepends=True) if path.exists() else []
        if len(lines) < state.metrics_lines:
            raise ConfigError(f"{path} has fewer records than the checkpoint expects")
        atomic_write_text(path, "".join(lines[: state.metrics_lines]))
        return state

    def latest_checkpoint(self) -> Optional[Path]:
        latest = self.out / "checkpoints" / "LATEST"
        return self.out / "checkpoints" / latest.read_text().strip() if latest.exists() else None

    def step(self, state: IterationState, dataset=None):
        phase = state.next_phase
        try:
            if phase == "challenger":
                return self.run_challenger_phase(state), None
            if phase == "curation":
                return self.run_curation_phase(state)
            return self.run_solver_phase(state, dataset), None
        except PhaseError as exc:
            if exc.checkpoint is None:
                exc.checkpoint = self.latest_checkpoint()
            raise

    def run_loop(
        self,
        resume: Optional[str | Path] = None,
        stop_after: Optional[tuple[int, str]] = None,
    ) -> tuple[IterationState, list[dict]]:
        """Run until ``config.iterations`` are complete.

        ``stop_after=(iteration, phase)`` halts right after that phase's
        checkpoint, emulating an interruption.
        """
        state = self.resume(resume) if resume is not None else self.start()
        dataset = None
        while state.iteration <= self.config.iterations:
            t, phase = state.iteration, state.next_phase
            try:
                state, produced = self.step(state, dataset)
            except (PhaseError, EmptyCurriculumError):
                raise
            except CoevolveError as exc:
                raise PhaseError(f"{phase} phase: {exc}", phase, t) from exc
            dataset = produced if phase == "curation" else None
            if stop_after == (t, phase):
                break
        return state, self.read_metrics(state)

    def read_metrics(self, state: Optional[IterationState] = None) -> list[dict]:
        path = self.out / (state.metrics_path if state else "metrics.jsonl")
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def run_loop(config: LoopConfig, output_dir: str | Path, **kwargs) -> tuple[IterationState, list[dict]]:
    return Engine(config, output_dir).run_loop(**kwargs)
