"""Majority-vote pseudo-labels, informative-band filtering, and dataset files."""

from __future__ import annotations

import json
import os
import re
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .challenger_reward import extract_last_boxed
from .errors import RejectedInputError

FORMAT_VERSION = 1
DATASET_KIND = "coevolve-dataset"
# p_hat is a ratio k/m; absorb float rounding at the band edges
_BAND_TOL = 1e-12
_WS = re.compile(r"\s+")


class AnswerKey(str):
    """Canonical answer string; build with :func:`normalize_answer`."""


class RejectReason(str, Enum):
    NONE = "none"
    TOO_EASY = "too_easy"
    TOO_HARD = "too_hard"


def normalize_answer(raw: str) -> AnswerKey:
    boxed = extract_last_boxed(raw)
    if boxed is None:
        lines = [ln for ln in raw.splitlines() if ln.strip()]
        boxed = lines[-1] if lines else ""
    return AnswerKey(_WS.sub(" ", boxed.strip()))


@dataclass(frozen=True)
class VoteResult:
    pseudo_label: AnswerKey
    majority_count: int
    p_hat: float
    histogram: dict
    m: int


def majority_vote(
    answers: Sequence[str],
    m: Optional[int] = None,
    normalize: Callable[[str], AnswerKey] = normalize_answer,
) -> VoteResult:
    """Plurality answer over ``m`` samples; ties go to the smallest canonical string."""
    if not answers:
        raise RejectedInputError("need at least one answer to vote on")
    if m is not None and m != len(answers):
        raise RejectedInputError(f"expected {m} answers, got {len(answers)}")
    counts = Counter(normalize(a) for a in answers)
    label, top = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    histogram = dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
    n = len(answers)
    return VoteResult(AnswerKey(label), top, top / n, histogram, n)


def informative_band_filter(p_hat: float, delta: float) -> tuple[bool, RejectReason]:
    if not 0.0 <= p_hat <= 1.0:
        raise RejectedInputError(f"p_hat must lie in [0, 1], got {p_hat}")
    if not 0.0 <= delta <= 0.5:
        raise RejectedInputError(f"delta must lie in [0, 0.5], got {delta}")
    if p_hat > 0.5 + delta + _BAND_TOL:
        return False, RejectReason.TOO_EASY
    if p_hat < 0.5 - delta - _BAND_TOL:
        return False, RejectReason.TOO_HARD
    return True, RejectReason.NONE


def solver_reward(
    answer: str,
    pseudo_label: str,
    normalize: Callable[[str], AnswerKey] = normalize_answer,
) -> int:
    return int(normalize(answer) == pseudo_label)


@dataclass
class CurationRecord:
    question_id: str
    question_text: str
    pseudo_label: AnswerKey
    p_hat: float
    histogram: dict
    kept: bool
    reject_reason: RejectReason
    iteration: int = 0

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "question_text": self.question_text,
            "pseudo_label": str(self.pseudo_label),
            "p_hat": self.p_hat,
            "histogram": {str(k): v for k, v in self.histogram.items()},
            "iteration": self.iteration,
            "kept": self.kept,
            "reject_reason": self.reject_reason.value,
        }

    @classmethod
    def from_json(cls, row: dict) -> "CurationRecord":
        _check_row(row)
        return cls(
            question_id=row["question_id"],
            question_text=row["question_text"],
            pseudo_label=AnswerKey(row["pseudo_label"]),
            p_hat=float(row["p_hat"]),
            histogram={AnswerKey(k): int(v) for k, v in row["histogram"].items()},
            kept=row["kept"],
            reject_reason=RejectReason(row["reject_reason"]),
            iteration=row["iteration"],
        )


@dataclass
class CurationStats:
    total: int = 0
    kept: int = 0
    too_easy: int = 0
    too_hard: int = 0
    p_hat_histogram: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "kept": self.kept,
            "too_easy": self.too_easy,
            "too_hard": self.too_hard,
            "p_hat_histogram": dict(self.p_hat_histogram),
        }


def build_dataset(
    pool: Sequence[tuple[str, str, Sequence[str]]],
    delta: float = 0.25,
    filter_enabled: bool = True,
    iteration: int = 0,
    normalize: Callable[[str], AnswerKey] = normalize_answer,
) -> tuple[list[CurationRecord], list[CurationRecord], CurationStats]:
    """Vote and band-filter every ``(question_id, question_text, answers)`` entry.

    Returns all records, the kept subset in pool order, and summary counts.
    With ``filter_enabled=False`` every question is kept.
    """
    if not pool:
        return [], [], CurationStats()
    votes = len(pool[0][2])
    if any(len(ans) != votes for _, _, ans in pool):
        raise RejectedInputError("every pool entry needs the same number of solver answers")
    records = []
    stats = CurationStats(total=len(pool))
    p_counts: Counter = Counter()
    for qid, text, answers in pool:
        vote = majority_vote(answers, votes, normalize)
        if filter_enabled:
            kept, reason = informative_band_filter(vote.p_hat, delta)
        else:
            kept, reason = True, RejectReason.NONE
        records.append(CurationRecord(qid, text, vote.pseudo_label, vote.p_hat, vote.histogram, kept, reason, iteration))
        p_counts[f"{vote.majority_count}/{votes}"] += 1
        if kept:
            stats.kept += 1
        elif reason is RejectReason.TOO_EASY:
            stats.too_easy += 1
        else:
            stats.too_hard += 1
    stats.p_hat_histogram = dict(sorted(p_counts.items(), key=lambda kv: int(kv[0].split("/")[0])))
    return records, [r for r in records if r.kept], stats


_ROW_TYPES = {
    "question_id": str,
    "question_text": str,
    "pseudo_label": str,
    "p_hat": (int, float),
    "histogram": dict,
    "iteration": int,
    "kept": bool,
    "reject_reason": str,
}


def _check_row(row: dict) -> None:
    missing = _ROW_TYPES.keys() - row.keys()
    extra = row.keys() - _ROW_TYPES.keys()
    if missing or extra:
        raise RejectedInputError(f"dataset row fields mismatch (missing={sorted(missing)}, unknown={sorted(extra)})")
    for name, typ in _ROW_TYPES.items():
        val = row[name]
        if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
            raise RejectedInputError(f"dataset field {name!r} has wrong type {type(val).__name__}")
    if row["kept"] != (row["reject_reason"] == RejectReason.NONE.value):
        raise RejectedInputError("kept must be true exactly when reject_reason is 'none'")


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(path: Path, records: Iterable[CurationRecord]) -> None:
    lines = [json.dumps({"format_version": FORMAT_VERSION, "kind": DATASET_KIND})]
    lines.extend(json.dumps(r.to_json(), ensure_ascii=False) for r in records)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_dataset(path: Path) -> list[CurationRecord]:
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise RejectedInputError(f"{path}: missing header record")
        header = json.loads(header_line)
        if header.get("format_version") != FORMAT_VERSION or header.get("kind") != DATASET_KIND:
            raise RejectedInputError(f"{path}: unsupported dataset header {header!r}")
        return [CurationRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def summarize_records(records: Sequence[CurationRecord]) -> dict:
    reasons = Counter(r.reject_reason.value for r in records)
    return {
        "total": len(records),
        "kept": reasons.get("none", 0),
        "too_easy": reasons.get("too_easy", 0),
        "too_hard": reasons.get("too_hard", 0),
    }
