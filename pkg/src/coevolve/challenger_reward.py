"""Reward pipeline for generated questions.

Each generation passes a structural format gate, then earns an uncertainty
reward from the Solver's self-consistency minus a penalty for belonging to
a large cluster of near-duplicate questions in the same batch.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .errors import PipelineWiringError, RejectedInputError
from .similarity import ClusterAssignment, cluster, pairwise_distances, tokenize

_QUESTION_RE = re.compile(r"<question>(.*?)</question>", re.DOTALL)
_BOXED = "\\boxed{"


@dataclass(frozen=True)
class FormatCheckResult:
    ok: bool
    question_text: str = ""
    self_answer: Optional[str] = None


@dataclass(frozen=True)
class RewardBreakdown:
    format_ok: bool
    r_uncertainty: float
    r_rep: float
    composite: float

    def to_dict(self) -> dict:
        return asdict(self)


def extract_last_boxed(text: str) -> Optional[str]:
    """Content of the last ``\\boxed{...}``, honouring nested braces."""
    start = text.rfind(_BOXED)
    while start != -1:
        depth = 1
        i = start + len(_BOXED)
        while i < len(text):
            ch = text[i]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start + len(_BOXED) : i]
            i += 1
        # unbalanced; try an earlier occurrence
        start = text.rfind(_BOXED, 0, start)
    return None


def check_format(raw: str) -> FormatCheckResult:
    blocks = _QUESTION_RE.findall(raw)
    # a stray opening/closing tag means the structure is broken
    if len(blocks) != 1 or raw.count("<question>") != 1 or raw.count("</question>") != 1:
        return FormatCheckResult(ok=False)
    text = blocks[0].strip()
    if not text:
        return FormatCheckResult(ok=False)
    tail = raw[raw.index("</question>") + len("</question>") :]
    answer = extract_last_boxed(tail)
    return FormatCheckResult(ok=True, question_text=text, self_answer=answer.strip() if answer is not None else None)


def uncertainty_reward(p_hat: float) -> float:
    if not (0.0 <= p_hat <= 1.0):
        raise RejectedInputError(f"p_hat must lie in [0, 1], got {p_hat}")
    return 1.0 - 2.0 * abs(p_hat - 0.5)


def repetition_penalty(assignment: ClusterAssignment, lam: float, batch_size: int) -> list[float]:
    if len(assignment.labels) != batch_size:
        raise RejectedInputError(
            f"assignment covers {len(assignment.labels)} items but batch_size is {batch_size}"
        )
    if lam < 0:
        raise RejectedInputError("lambda must be >= 0")
    return [lam * assignment.size_of(i) / batch_size for i in range(batch_size)]


def composite_reward(format_ok: bool, r_uncertainty: float, r_rep: float) -> float:
    if not format_ok:
        return 0.0
    return max(0.0, r_uncertainty - r_rep)


def score_batch(
    raw_generations: Sequence[str],
    solver_accuracies: Sequence[Optional[float]],
    lam: float = 1.0,
    tau: float = 0.5,
    rep_penalty_enabled: bool = True,
    checks: Optional[Sequence[FormatCheckResult]] = None,
) -> list[RewardBreakdown]:
    """Score a batch of raw generations.

    ``solver_accuracies[i]`` must be present exactly when generation ``i``
    passes the format check.  Clustering and the batch size used by the
    repetition penalty cover only the format-valid subset.  Pass ``checks``
    to reuse format results computed upstream.
    """
    if len(raw_generations) != len(solver_accuracies):
        raise PipelineWiringError("one accuracy slot is required per generation")
    if checks is None:
        checks = [check_format(g) for g in raw_generations]
    valid = [i for i, c in enumerate(checks) if c.ok]
    for i, c in enumerate(checks):
        acc = solver_accuracies[i]
        if c.ok and acc is None:
            raise PipelineWiringError(f"generation {i} passed the format check but has no solver accuracy")
        if not c.ok and acc is not None:
            raise PipelineWiringError(f"generation {i} failed the format check but carries an accuracy")

    penalties = {i: 0.0 for i in valid}
    if valid and rep_penalty_enabled:
        tokens = [tokenize(checks[i].question_text) for i in valid]
        assignment = cluster(pairwise_distances(tokens), tau)
        for i, pen in zip(valid, repetition_penalty(assignment, lam, len(valid))):
            penalties[i] = pen

    out = []
    for i, c in enumerate(checks):
        if not c.ok:
            out.append(RewardBreakdown(format_ok=False, r_uncertainty=0.0, r_rep=0.0, composite=0.0))
            continue
        p_hat = float(solver_accuracies[i])
        if not math.isfinite(p_hat):
            raise RejectedInputError(f"accuracy for generation {i} is not finite")
        u = uncertainty_reward(p_hat)
        rep = penalties[i]
        out.append(RewardBreakdown(True, u, rep, composite_reward(True, u, rep)))
    return out
