from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import nnls

from burnscope import _kernels_py, kernels

try:
    from burnscope import _ckernels
except ImportError:  # pragma: no cover - build without a compiler
    _ckernels = None

IMPLS = [_kernels_py] + ([_ckernels] if _ckernels is not None else [])
needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def brute_majority(labels, mask, radius, k):
    rows, cols = labels.shape
    out = labels.copy()
    for i in range(rows):
        for j in range(cols):
            if not mask[i, j]:
                continue
            votes = np.zeros(k, int)
            for a in range(max(0, i - radius), min(rows, i + radius + 1)):
                for b in range(max(0, j - radius), min(cols, j + radius + 1)):
                    if mask[a, b]:
                        votes[labels[a, b]] += 1
            best = votes.max()
            if (votes == best).sum() == 1 and votes[labels[i, j]] < best:
                out[i, j] = int(np.argmax(votes))
    return out


def brute_window_stats(img, half):
    rows, cols = img.shape
    m = np.empty_like(img)
    s = np.empty_like(img)
    for i in range(rows):
        for j in range(cols):
            w = img[max(0, i - half):i + half + 1, max(0, j - half):j + half + 1]
            m[i, j] = w.mean()
            s[i, j] = w.std()
    return m, s


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
class TestAgainstOracles:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 2), st.integers(2, 4))
    def test_majority(self, impl, seed, radius, k):
        rng = np.random.default_rng(seed)
        lab = rng.integers(0, k, size=(9, 7))
        mask = rng.uniform(size=lab.shape) > 0.2
        got = impl.majority_filter(lab, mask, radius, k)
        np.testing.assert_array_equal(got, brute_majority(lab, mask, radius, k))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 3))
    def test_window_stats(self, impl, seed, half):
        img = np.random.default_rng(seed).uniform(0, 5, size=(8, 11))
        m, s = impl.window_stats(img, half)
        bm, bs = brute_window_stats(img, half)
        np.testing.assert_allclose(m, bm, atol=1e-12)
        np.testing.assert_allclose(s, bs, atol=1e-9)

    def test_nnls_matches_scipy(self, impl):
        rng = np.random.default_rng(7)
        design = np.abs(rng.standard_normal((20, 3))) + 0.1
        targets = rng.standard_normal((200, 20))
        got = impl.nnls_batch(design, targets)
        for x, y in zip(got, targets):
            ref, _ = nnls(design, y)
            r_got = np.linalg.norm(design @ x - y)
            r_ref = np.linalg.norm(design @ ref - y)
            assert np.all(x >= 0)
            assert r_got <= r_ref + 1e-10


@needs_c
def test_backends_agree():
    rng = np.random.default_rng(3)
    lab = rng.integers(0, 4, size=(30, 30))
    mask = rng.uniform(size=lab.shape) > 0.1
    np.testing.assert_array_equal(_ckernels.majority_filter(lab, mask, 1, 4),
                                  _kernels_py.majority_filter(lab, mask, 1, 4))
    img = rng.uniform(size=(25, 31))
    for a, b in zip(_ckernels.window_stats(img, 3), _kernels_py.window_stats(img, 3)):
        np.testing.assert_allclose(a, b, atol=1e-10)
    design = np.abs(rng.standard_normal((15, 3)))
    y = rng.standard_normal((50, 15))
    np.testing.assert_allclose(_ckernels.nnls_batch(design, y),
                               _kernels_py.nnls_batch(design, y), atol=1e-10)


@needs_c
def test_compiled_backend_selected_by_default():
    assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, BURNSCOPE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from burnscope import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
