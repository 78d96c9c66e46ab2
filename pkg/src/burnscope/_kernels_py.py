"""Pure numpy implementations of the hot per-pixel kernels.

These are the fallback when the compiled ``_ckernels`` extension is not
available. Signatures and semantics match the Cython versions exactly.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np


def majority_filter(labels: np.ndarray, mask: np.ndarray, radius: int, k: int) -> np.ndarray:
    """Majority vote over the clipped (2r+1)^2 window; ties keep the centre label."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    rows, cols = labels.shape
    one_hot = np.zeros((k, rows, cols), dtype=np.int64)
    for c in range(k):
        one_hot[c] = mask & (labels == c)
    # 2-D prefix sums, one per class
    ps = np.zeros((k, rows + 1, cols + 1), dtype=np.int64)
    ps[:, 1:, 1:] = one_hot.cumsum(axis=1).cumsum(axis=2)
    r0 = np.clip(np.arange(rows) - radius, 0, rows)
    r1 = np.clip(np.arange(rows) + radius + 1, 0, rows)
    c0 = np.clip(np.arange(cols) - radius, 0, cols)
    c1 = np.clip(np.arange(cols) + radius + 1, 0, cols)
    votes = (ps[:, r1[:, None], c1[None, :]] - ps[:, r0[:, None], c1[None, :]]
             - ps[:, r1[:, None], c0[None, :]] + ps[:, r0[:, None], c0[None, :]])
    best = votes.max(axis=0)
    winner = votes.argmax(axis=0)
    n_best = (votes == best[None]).sum(axis=0)
    own = np.take_along_axis(votes, np.clip(labels, 0, k - 1)[None], axis=0)[0]
    out = labels.copy()
    change = mask & (n_best == 1) & (own < best)
    out[change] = winner[change]
    return out


def _subset_inverses(gram: np.ndarray):
    p = gram.shape[0]
    subsets = []
    for size in range(1, p + 1):
        for s in combinations(range(p), size):
            idx = np.array(s)
            sub = gram[np.ix_(idx, idx)]
            if abs(np.linalg.det(sub)) < 1e-12 * max(1.0, float(np.max(np.abs(sub)))) ** size:
                continue
            subsets.append((idx, np.linalg.inv(sub)))
    return subsets


def nnls_batch(design: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Non-negative least squares for many right-hand sides and a tiny design.

    The optimum is the unconstrained least-squares solution on its own
    support, so enumerating every support and keeping the feasible one with
    the smallest residual is exact. Practical for up to ~4 columns.
    """
    design = np.asarray(design, dtype=np.float64)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    n = targets.shape[0]
    p = design.shape[1]
    gram = design.T @ design
    b = targets @ design  # (n, p)
    best_obj = np.zeros(n)  # empty support: x = 0
    best_x = np.zeros((n, p))
    for idx, inv in _subset_inverses(gram):
        x = b[:, idx] @ inv.T
        feasible = np.all(x >= 0.0, axis=1)
        # residual - |y|^2 at the least-squares point on this support
        obj = -np.einsum("ij,ij->i", x, b[:, idx])
        better = feasible & (obj < best_obj)
        if better.any():
            best_obj[better] = obj[better]
            best_x[better] = 0.0
            best_x[np.ix_(better, idx)] = x[better]
    return best_x


def _box_sum(ps: np.ndarray, r0, r1, c0, c1) -> np.ndarray:
    return (ps[r1[:, None], c1[None, :]] - ps[r0[:, None], c1[None, :]]
            - ps[r1[:, None], c0[None, :]] + ps[r0[:, None], c0[None, :]])


def window_stats(image: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std over clipped (2h+1)^2 windows centred on each pixel."""
    img = np.asarray(image, dtype=np.float64)
    rows, cols = img.shape
    shift = float(img.mean()) if img.size else 0.0
    x = img - shift
    ps1 = np.zeros((rows + 1, cols + 1))
    ps2 = np.zeros((rows + 1, cols + 1))
    ps1[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    ps2[1:, 1:] = (x * x).cumsum(axis=0).cumsum(axis=1)
    r0 = np.clip(np.arange(rows) - half, 0, rows)
    r1 = np.clip(np.arange(rows) + half + 1, 0, rows)
    c0 = np.clip(np.arange(cols) - half, 0, cols)
    c1 = np.clip(np.arange(cols) + half + 1, 0, cols)
    count = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    s1 = _box_sum(ps1, r0, r1, c0, c1)
    s2 = _box_sum(ps2, r0, r1, c0, c1)
    m = s1 / count
    var = np.maximum(s2 / count - m * m, 0.0)
    return m + shift, np.sqrt(var)
