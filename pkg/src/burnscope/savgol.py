"""Savitzky-Golay smoothing and differentiation on arbitrary wavelength grids.

Each output band is a local least-squares polynomial fit evaluated at that
band's own wavelength, so unequal band spacing is handled exactly. Near the
ends of the axis the window is clipped to the bands that exist.
"""

from __future__ import annotations

from math import factorial
from typing import Sequence

import numpy as np

from .errors import ParameterError


def check_window(window: int, polyorder: int, n_bands: int, deriv: int = 0) -> None:
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be a positive odd band count, got {window}")
    if polyorder < 0 or window <= polyorder:
        raise ParameterError(f"window ({window}) must exceed polyorder ({polyorder})")
    if window > n_bands:
        raise ParameterError(f"window ({window}) exceeds band count ({n_bands})")
    if deriv > polyorder:
        raise ParameterError(f"derivative order {deriv} exceeds polyorder {polyorder}")


def savgol_matrix(wavelengths: np.ndarray, window: int | Sequence[int], polyorder: int,
                  deriv: int = 0) -> np.ndarray:
    """(bands, bands) operator M such that ``spectra @ M.T`` is the filtered output.

    ``window`` may be a per-band sequence of odd window lengths.
    """
    wl = np.asarray(wavelengths, dtype=np.float64)
    n = wl.size
    windows = np.broadcast_to(np.asarray(window, dtype=np.int64), (n,))
    M = np.zeros((n, n))
    for i in range(n):
        half = int(windows[i]) // 2
        lo, hi = max(0, i - half), min(n, i + half + 1)
        deg = min(polyorder, hi - lo - 1)
        if deriv > deg:
            raise ParameterError(
                f"clipped window at band {i} has {hi - lo} samples; too few for derivative {deriv}")
        x = wl[lo:hi] - wl[i]
        scale = float(np.max(np.abs(x))) or 1.0
        V = np.vander(x / scale, deg + 1, increasing=True)
        coef_rows = np.linalg.pinv(V)
        M[i, lo:hi] = coef_rows[deriv] * factorial(deriv) / scale ** deriv
    return M


def window_table_lengths(wavelengths: np.ndarray, default: int,
                         table: Sequence[Sequence[float]] | None) -> np.ndarray:
    """Per-band window lengths from ``[(lo_nm, hi_nm, window), ...]`` overrides."""
    wl = np.asarray(wavelengths)
    out = np.full(wl.size, int(default), dtype=np.int64)
    for lo, hi, w in table or ():
        out[(wl >= lo) & (wl <= hi)] = int(w)
    return out


def apply_along_bands(data: np.ndarray, M: np.ndarray) -> np.ndarray:
    flat = data.reshape(-1, data.shape[-1])
    return (flat @ M.T).reshape(data.shape)
