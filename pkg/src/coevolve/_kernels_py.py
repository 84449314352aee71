"""Pure-Python/numpy fallback for :mod:`coevolve._kernels`.

Same signatures and the same floating-point operation order as the
compiled module, so distances and cluster assignments are identical.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

BACKEND = "python"


def _ngram_counts(tokens: tuple, max_order: int) -> list[Counter]:
    return [
        Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))
        for n in range(1, max_order + 1)
    ]


def _bleu_counts(cand_counts, clen, ref_counts, rlen, max_order, smooth_eps) -> float:
    if clen == 0 or rlen == 0:
        return 0.0
    logsum = 0.0
    used = 0
    for n in range(1, max_order + 1):
        total = clen - n + 1
        if total <= 0:
            continue
        ref_n = ref_counts[n - 1]
        matches = sum(min(c, ref_n[g]) for g, c in cand_counts[n - 1].items() if g in ref_n)
        num = float(matches) if matches > 0 else smooth_eps
        logsum += math.log(num / float(total))
        used += 1
    geo = math.exp(logsum / used)
    if clen >= rlen:
        return geo
    return math.exp(1.0 - float(rlen) / float(clen)) * geo


def bleu_ids(cand, ref, max_order: int = 4, smooth_eps: float = 0.1) -> float:
    c = tuple(int(t) for t in cand)
    r = tuple(int(t) for t in ref)
    return _bleu_counts(
        _ngram_counts(c, max_order), len(c), _ngram_counts(r, max_order), len(r), max_order, smooth_eps
    )


def distance_matrix(flat, offsets, max_order: int = 4, smooth_eps: float = 0.1) -> np.ndarray:
    flat = [int(t) for t in flat]
    offsets = [int(o) for o in offsets]
    n = len(offsets) - 1
    seqs = [tuple(flat[offsets[i] : offsets[i + 1]]) for i in range(n)]
    counts = [_ngram_counts(s, max_order) for s in seqs]
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            b_ij = _bleu_counts(counts[i], len(seqs[i]), counts[j], len(seqs[j]), max_order, smooth_eps)
            b_ji = _bleu_counts(counts[j], len(seqs[j]), counts[i], len(seqs[i]), max_order, smooth_eps)
            d = 1.0 - 0.5 * (b_ij + b_ji)
            out[i, j] = d
            out[j, i] = d
    return out


def average_linkage(dist, threshold: float) -> np.ndarray:
    """Return, per item, the smallest original index in its cluster."""
    work = np.array(dist, dtype=np.float64, copy=True)
    n = work.shape[0]
    size = np.ones(n, dtype=np.float64)
    active = np.ones(n, dtype=bool)
    rep = np.arange(n, dtype=np.int64)
    # upper-triangle view used for the min scan; argmin's first hit is the
    # lexicographically smallest (i, j)
    scan = np.where(np.triu(np.ones((n, n), dtype=bool), k=1), work, np.inf)
    while n > 1:
        flat_idx = int(np.argmin(scan))
        bi, bj = divmod(flat_idx, n)
        best = scan[bi, bj]
        if not best < threshold:
            break
        others = active.copy()
        others[bi] = others[bj] = False
        ks = np.nonzero(others)[0]
        v = (size[bi] * work[bi, ks] + size[bj] * work[bj, ks]) / (size[bi] + size[bj])
        work[bi, ks] = v
        work[ks, bi] = v
        lower = ks < bi
        scan[ks[lower], bi] = v[lower]
        scan[bi, ks[~lower]] = v[~lower]
        size[bi] += size[bj]
        active[bj] = False
        scan[bj, :] = np.inf
        scan[:, bj] = np.inf
        rep[rep == bj] = bi
    return rep
