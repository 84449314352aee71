# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for BLEU distance matrices and average-linkage clustering.

Sentences arrive as a flat int64 token-id array plus offsets (n + 1 entries).
Arithmetic order mirrors ``_kernels_py`` so both paths agree bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

BACKEND = "cython"


cdef Py_ssize_t _count(const cnp.int64_t[:] seq, Py_ssize_t start, Py_ssize_t length,
                       const cnp.int64_t[:] gram_src, Py_ssize_t gram_at, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k, hits = 0
    for i in range(start, start + length - n + 1):
        for k in range(n):
            if seq[i + k] != gram_src[gram_at + k]:
                break
        else:
            hits += 1
    return hits


cdef double _bleu(const cnp.int64_t[:] flat, Py_ssize_t c0, Py_ssize_t clen,
                  Py_ssize_t r0, Py_ssize_t rlen, int max_order, double smooth_eps) noexcept nogil:
    cdef Py_ssize_t n, i, j, k, total, matches, seen, in_cand, in_ref
    cdef double logsum = 0.0, num
    cdef int used = 0
    if clen == 0 or rlen == 0:
        return 0.0
    for n in range(1, max_order + 1):
        total = clen - n + 1
        if total <= 0:
            continue
        matches = 0
        for i in range(c0, c0 + total):
            # only score the first occurrence of each distinct n-gram
            seen = 0
            for j in range(c0, i):
                for k in range(n):
                    if flat[j + k] != flat[i + k]:
                        break
                else:
                    seen = 1
                    break
            if seen:
                continue
            in_cand = _count(flat, c0, clen, flat, i, n)
            in_ref = _count(flat, r0, rlen, flat, i, n)
            matches += in_cand if in_cand < in_ref else in_ref
        if matches > 0:
            num = <double>matches
        else:
            num = smooth_eps
        logsum += log(num / <double>total)
        used += 1
    cdef double geo = exp(logsum / used)
    if clen >= rlen:
        return geo
    return exp(1.0 - <double>rlen / <double>clen) * geo


def bleu_ids(cnp.int64_t[:] cand, cnp.int64_t[:] ref, int max_order=4, double smooth_eps=0.1):
    cdef Py_ssize_t clen = cand.shape[0], rlen = ref.shape[0]
    flat = np.concatenate([np.asarray(cand), np.asarray(ref)]).astype(np.int64)
    cdef cnp.int64_t[:] view = flat
    return _bleu(view, 0, clen, clen, rlen, max_order, smooth_eps)


cdef Py_ssize_t _merge_matches(const cnp.int64_t[:] keys, Py_ssize_t a, Py_ssize_t a_end,
                               Py_ssize_t b, Py_ssize_t b_end) noexcept nogil:
    # both segments sorted: the merge counts sum over grams of min(count_a, count_b)
    cdef Py_ssize_t hits = 0
    while a < a_end and b < b_end:
        if keys[a] < keys[b]:
            a += 1
        elif keys[a] > keys[b]:
            b += 1
        else:
            hits += 1
            a += 1
            b += 1
    return hits


cdef double _bleu_packed(const cnp.int64_t[:, :] keys, const cnp.int64_t[:] offsets,
                         Py_ssize_t ci, Py_ssize_t ri, int max_order, double smooth_eps) noexcept nogil:
    cdef Py_ssize_t clen = offsets[ci + 1] - offsets[ci]
    cdef Py_ssize_t rlen = offsets[ri + 1] - offsets[ri]
    cdef Py_ssize_t n, total, rtotal, matches
    cdef double logsum = 0.0, num
    cdef int used = 0
    if clen == 0 or rlen == 0:
        return 0.0
    for n in range(1, max_order + 1):
        total = clen - n + 1
        if total <= 0:
            continue
        rtotal = rlen - n + 1
        if rtotal > 0:
            matches = _merge_matches(keys[n - 1], offsets[ci], offsets[ci] + total,
                                     offsets[ri], offsets[ri] + rtotal)
        else:
            matches = 0
        if matches > 0:
            num = <double>matches
        else:
            num = smooth_eps
        logsum += log(num / <double>total)
        used += 1
    cdef double geo = exp(logsum / used)
    if clen >= rlen:
        return geo
    return exp(1.0 - <double>rlen / <double>clen) * geo


def _packed_keys(flat, offsets, int max_order):
    """Sorted per-sentence n-gram keys, or None when ids are too large to pack exactly."""
    flat = np.asarray(flat, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    size = flat.shape[0]
    base = int(flat.max()) + 1 if size else 1
    if base ** max_order >= 2 ** 62:
        return None
    seg = np.repeat(np.arange(offsets.shape[0] - 1), np.diff(offsets))
    pos = np.arange(size) - offsets[seg] if size else np.zeros(0, dtype=np.int64)
    seg_len = np.diff(offsets)[seg] if size else np.zeros(0, dtype=np.int64)
    keys = np.full((max_order, size), np.iinfo(np.int64).max, dtype=np.int64)
    for n in range(1, max_order + 1):
        valid = pos + n <= seg_len
        idx = np.nonzero(valid)[0]
        packed = np.zeros(idx.shape[0], dtype=np.int64)
        for k in range(n):
            packed = packed * base + flat[idx + k]
        order = np.lexsort((packed, seg[idx]))
        # valid positions of a segment are a prefix of it, so sorted keys
        # land back on the same slots
        keys[n - 1, idx] = packed[order]
    return keys


def distance_matrix(cnp.int64_t[:] flat, cnp.int64_t[:] offsets, int max_order=4, double smooth_eps=0.1):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t i, j
    cdef double b_ij, b_ji, d
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] view = out
    packed = _packed_keys(flat, offsets, max_order)
    cdef cnp.int64_t[:, :] keys
    if packed is not None:
        keys = packed
        with nogil:
            for i in range(n):
                for j in range(i + 1, n):
                    b_ij = _bleu_packed(keys, offsets, i, j, max_order, smooth_eps)
                    b_ji = _bleu_packed(keys, offsets, j, i, max_order, smooth_eps)
                    d = 1.0 - 0.5 * (b_ij + b_ji)
                    view[i, j] = d
                    view[j, i] = d
        return out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                b_ij = _bleu(flat, offsets[i], offsets[i + 1] - offsets[i],
                             offsets[j], offsets[j + 1] - offsets[j], max_order, smooth_eps)
                b_ji = _bleu(flat, offsets[j], offsets[j + 1] - offsets[j],
                             offsets[i], offsets[i + 1] - offsets[i], max_order, smooth_eps)
                d = 1.0 - 0.5 * (b_ij + b_ji)
                view[i, j] = d
                view[j, i] = d
    return out


def average_linkage(double[:, :] dist, double threshold):
    """Return, per item, the smallest original index in its cluster."""
    cdef Py_ssize_t n = dist.shape[0]
    work = np.array(dist, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] view = work
    size_arr = np.ones(n, dtype=np.float64)
    cdef double[::1] size = size_arr
    active_arr = np.ones(n, dtype=np.int8)
    cdef signed char[::1] active = active_arr
    rep_arr = np.arange(n, dtype=np.int64)
    cdef cnp.int64_t[::1] rep = rep_arr
    cdef Py_ssize_t i, j, k, bi, bj
    cdef double best, v
    with nogil:
        while True:
            best = INFINITY
            bi = -1
            bj = -1
            for i in range(n):
                if not active[i]:
                    continue
                for j in range(i + 1, n):
                    if active[j] and view[i, j] < best:
                        best = view[i, j]
                        bi = i
                        bj = j
            if bi < 0 or not (best < threshold):
                break
            for k in range(n):
                if active[k] and k != bi and k != bj:
                    v = (size[bi] * view[bi, k] + size[bj] * view[bj, k]) / (size[bi] + size[bj])
                    view[bi, k] = v
                    view[k, bi] = v
            size[bi] += size[bj]
            active[bj] = 0
            for k in range(n):
                if rep[k] == bj:
                    rep[k] = bi
    return rep_arr
