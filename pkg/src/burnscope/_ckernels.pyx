# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-pixel kernels. Semantics mirror ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def majority_filter(labels, mask, int radius, int k):
    cdef cnp.int64_t[:, ::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef cnp.uint8_t[:, ::1] msk = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t rows = lab.shape[0], cols = lab.shape[1]
    out_arr = np.array(lab, dtype=np.int64, copy=True)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef cnp.int64_t[::1] votes = np.zeros(k, dtype=np.int64)
    cdef Py_ssize_t r, c, rr, cc, r0, r1, c0, c1, j
    cdef cnp.int64_t best, nbest, winner, own, v
    for r in range(rows):
        r0 = r - radius if r >= radius else 0
        r1 = r + radius + 1 if r + radius + 1 <= rows else rows
        for c in range(cols):
            if not msk[r, c]:
                continue
            c0 = c - radius if c >= radius else 0
            c1 = c + radius + 1 if c + radius + 1 <= cols else cols
            for j in range(k):
                votes[j] = 0
            for rr in range(r0, r1):
                for cc in range(c0, c1):
                    if msk[rr, cc]:
                        v = lab[rr, cc]
                        if 0 <= v < k:
                            votes[v] += 1
            best = -1
            nbest = 0
            winner = 0
            for j in range(k):
                if votes[j] > best:
                    best = votes[j]
                    winner = j
                    nbest = 1
                elif votes[j] == best:
                    nbest += 1
            own = votes[lab[r, c]] if 0 <= lab[r, c] < k else -1
            if nbest == 1 and own < best:
                out[r, c] = winner
    return out_arr


cdef bint _solve_sym(double* a, double* b, int n) nogil:
    """In-place Gaussian elimination with partial pivoting on an n x n system (n <= 4)."""
    cdef int i, j, col, piv
    cdef double t, f
    for col in range(n):
        piv = col
        for i in range(col + 1, n):
            if fabs(a[i * n + col]) > fabs(a[piv * n + col]):
                piv = i
        if fabs(a[piv * n + col]) < 1e-300:
            return False
        if piv != col:
            for j in range(n):
                t = a[col * n + j]; a[col * n + j] = a[piv * n + j]; a[piv * n + j] = t
            t = b[col]; b[col] = b[piv]; b[piv] = t
        for i in range(col + 1, n):
            f = a[i * n + col] / a[col * n + col]
            for j in range(col, n):
                a[i * n + j] -= f * a[col * n + j]
            b[i] -= f * b[col]
    for i in range(n - 1, -1, -1):
        t = b[i]
        for j in range(i + 1, n):
            t -= a[i * n + j] * b[j]
        b[i] = t / a[i * n + i]
    return True


def _valid_supports(gram):
    # supports rejected by the fallback as singular are rejected here too
    from ._kernels_py import _subset_inverses
    valid = np.zeros(1 << gram.shape[0], dtype=np.uint8)
    for sub, _ in _subset_inverses(gram):
        valid[sum(1 << int(i) for i in sub)] = 1
    return valid


def nnls_batch(design, targets):
    D = np.ascontiguousarray(design, dtype=np.float64)
    Y = np.ascontiguousarray(np.atleast_2d(targets), dtype=np.float64)
    cdef int p = D.shape[1]
    if p > 4:
        raise ValueError("nnls_batch supports at most 4 columns")
    gram_arr = np.ascontiguousarray(D.T @ D)
    B_arr = np.ascontiguousarray(Y @ D)
    cdef cnp.uint8_t[::1] ok = _valid_supports(gram_arr)
    cdef double[:, ::1] G = gram_arr
    cdef double[:, ::1] B = B_arr
    cdef Py_ssize_t n = B.shape[0], row
    out_arr = np.zeros((n, p), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double a[16]
    cdef double x[4]
    cdef int idx[4]
    cdef int subset, s, i, j
    cdef double obj, best
    cdef bint feasible
    with nogil:
        for row in range(n):
            best = 0.0
            for subset in range(1, 1 << p):
                if not ok[subset]:
                    continue
                s = 0
                for i in range(p):
                    if subset & (1 << i):
                        idx[s] = i
                        s += 1
                for i in range(s):
                    x[i] = B[row, idx[i]]
                    for j in range(s):
                        a[i * s + j] = G[idx[i], idx[j]]
                if not _solve_sym(a, x, s):
                    continue
                feasible = True
                obj = 0.0
                for i in range(s):
                    if x[i] < 0.0:
                        feasible = False
                        break
                    obj -= x[i] * B[row, idx[i]]
                if feasible and obj < best:
                    best = obj
                    for i in range(p):
                        out[row, i] = 0.0
                    for i in range(s):
                        out[row, idx[i]] = x[i]
    return out_arr


def window_stats(image, int half):
    cdef double[:, ::1] img = np.ascontiguousarray(image, dtype=np.float64)
    cdef Py_ssize_t rows = img.shape[0], cols = img.shape[1]
    mean_arr = np.empty((rows, cols), dtype=np.float64)
    std_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, ::1] std = std_arr
    cdef Py_ssize_t r, c, rr, cc, r0, r1, c0, c1
    cdef double s, d, m, cnt
    with nogil:
        for r in range(rows):
            r0 = r - half if r >= half else 0
            r1 = r + half + 1 if r + half + 1 <= rows else rows
            for c in range(cols):
                c0 = c - half if c >= half else 0
                c1 = c + half + 1 if c + half + 1 <= cols else cols
                cnt = <double>((r1 - r0) * (c1 - c0))
                s = 0.0
                for rr in range(r0, r1):
                    for cc in range(c0, c1):
                        s += img[rr, cc]
                m = s / cnt
                s = 0.0
                for rr in range(r0, r1):
                    for cc in range(c0, c1):
                        d = img[rr, cc] - m
                        s += d * d
                mean[r, c] = m
                std[r, c] = sqrt(s / cnt)
    return mean_arr, std_arr
