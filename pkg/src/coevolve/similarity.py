"""Whitespace tokenization, smoothed sentence BLEU, and average-linkage clustering.

The heavy lifting (all-pairs BLEU and the linkage loop) runs in a compiled
kernel when one was built; set ``COEVOLVE_PURE_PYTHON=1`` to force the numpy
fallback.  Both paths produce identical results.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels_py
from .errors import RejectedInputError

if os.environ.get("COEVOLVE_PURE_PYTHON"):
    _kernels = _kernels_py
else:
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        _kernels = _kernels_py

KERNEL_BACKEND: str = _kernels.BACKEND

__all__ = [
    "KERNEL_BACKEND",
    "ClusterAssignment",
    "tokenize",
    "sentence_bleu",
    "pairwise_distances",
    "cluster",
    "encode_batch",
]


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster labels 1..K, numbered by first appearance in input order."""

    labels: tuple[int, ...]
    cluster_sizes: dict[int, int]

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_sizes)

    def size_of(self, item: int) -> int:
        return self.cluster_sizes[self.labels[item]]


def tokenize(text: str) -> list[str]:
    return text.split()


def _check_bleu_args(max_order: int, smooth_eps: float) -> None:
    if max_order < 1:
        raise RejectedInputError("max_order must be >= 1")
    if not 0 < smooth_eps <= 1:
        raise RejectedInputError("smooth_eps must lie in (0, 1]")


def encode_batch(batch: Sequence[Sequence[str]]) -> tuple[np.ndarray, np.ndarray]:
    """Map token sequences to a flat int64 id array plus offsets."""
    vocab: dict[str, int] = {}
    ids: list[int] = []
    offsets = [0]
    for seq in batch:
        for tok in seq:
            ids.append(vocab.setdefault(tok, len(vocab)))
        offsets.append(len(ids))
    return np.asarray(ids, dtype=np.int64), np.asarray(offsets, dtype=np.int64)


def sentence_bleu(
    candidate: Sequence[str],
    reference: Sequence[str],
    max_order: int = 4,
    smooth_eps: float = 0.1,
) -> float:
    """Sentence-level BLEU of ``candidate`` against a single ``reference``.

    Uniform-weight geometric mean of clipped n-gram precisions times the
    brevity penalty.  A zero match count is replaced by ``smooth_eps``;
    orders longer than the candidate are left out of the mean.  Empty
    inputs score 0.
    """
    _check_bleu_args(max_order, smooth_eps)
    flat, offsets = encode_batch([candidate, reference])
    cut = int(offsets[1])
    return float(_kernels.bleu_ids(flat[:cut], flat[cut:], max_order, smooth_eps))


def pairwise_distances(
    batch: Sequence[Sequence[str]],
    max_order: int = 4,
    smooth_eps: float = 0.1,
) -> np.ndarray:
    """Symmetric distance matrix ``1 - mean(BLEU(i, j), BLEU(j, i))``."""
    if len(batch) < 1:
        raise RejectedInputError("batch must contain at least one sequence")
    _check_bleu_args(max_order, smooth_eps)
    flat, offsets = encode_batch(batch)
    return _kernels.distance_matrix(flat, offsets, max_order, smooth_eps)


def _validate_matrix(matrix: np.ndarray) -> np.ndarray:
    mat = np.ascontiguousarray(matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
        raise RejectedInputError("distance matrix must be square and non-empty")
    if not np.allclose(mat, mat.T, rtol=0, atol=1e-12):
        raise RejectedInputError("distance matrix must be symmetric")
    if np.any(np.diag(mat) != 0) or np.any(mat < 0) or np.any(mat > 1):
        raise RejectedInputError("distance matrix needs a zero diagonal and entries in [0, 1]")
    return mat


def cluster(matrix: np.ndarray, threshold: float) -> ClusterAssignment:
    """Agglomerative clustering with average linkage on a precomputed matrix.

    Clusters merge while the smallest average inter-cluster distance is
    strictly below ``threshold``.  Ties go to the pair whose smallest
    member indices are lexicographically smallest.
    """
    if not 0 <= threshold <= 1:
        raise RejectedInputError("threshold must lie in [0, 1]")
    mat = _validate_matrix(matrix)
    reps = _kernels.average_linkage(mat, float(threshold))
    label_of: dict[int, int] = {}
    labels = []
    for r in reps.tolist():
        labels.append(label_of.setdefault(r, len(label_of) + 1))
    return ClusterAssignment(labels=tuple(labels), cluster_sizes=dict(Counter(labels)))
