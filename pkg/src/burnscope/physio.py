"""Physiological index maps from calibrated cubes: absorbance, DTWI, StO2, derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from .core import HyperCube, LabelMap, ScalarMap
from .errors import FitError, ParameterError, RangeError
from .io import read_columns_csv
from .savgol import apply_along_bands, check_window, savgol_matrix

ABSORBANCE_FLOOR = 1e-6
DEFAULT_STO2_WINDOW = (520.0, 600.0)
EXTINCTION_ASSET = "hemoglobin_extinction_v1.csv"


def absorbance(cube: HyperCube) -> HyperCube:
    """A = -log10(max(R, 1e-6))."""
    if cube.quantity != "reflectance":
        raise ParameterError(f"absorbance needs a reflectance cube, got {cube.quantity!r}")
    a = -np.log10(np.maximum(cube.data, ABSORBANCE_FLOOR))
    return cube.derive(a, "absorbance", quantity="absorbance")


@dataclass(frozen=True)
class DtwiParams:
    s1: float
    s2: float
    numerator_nm: tuple[float, float] = (1150.0, 1230.0)
    denominator_nm: tuple[float, float] = (1250.0, 1350.0)

    def __post_init__(self) -> None:
        if not self.s1 > self.s2:
            raise ParameterError(f"DTWI anchors need s1 > s2, got s1={self.s1}, s2={self.s2}")


def _window_mean(cube: HyperCube, window: tuple[float, float]) -> np.ndarray:
    lo, hi = window
    if lo < cube.grid.min or hi > cube.grid.max:
        raise RangeError(f"window {lo}-{hi} nm lies outside the grid "
                         f"{cube.grid.min:g}-{cube.grid.max:g} nm")
    idx = cube.grid.indices_in(lo, hi)
    if idx.size == 0:
        raise RangeError(f"no bands inside {lo}-{hi} nm")
    return cube.data[..., idx].mean(axis=2)


def water_band_ratio(cube: HyperCube, numerator_nm=(1150.0, 1230.0),
                     denominator_nm=(1250.0, 1350.0)) -> ScalarMap:
    """Mean absorbance in the numerator window over that in the denominator window."""
    num = _window_mean(cube, tuple(numerator_nm))
    den = _window_mean(cube, tuple(denominator_nm))
    ok = cube.mask & (den >= 1e-9)
    r = np.where(ok, num / np.where(ok, den, 1.0), np.nan)
    return ScalarMap(r, ok, "water_band_ratio", "1", cube.provenance + ("water_band_ratio",))


def dtwi_from_ratio(r, params: DtwiParams):
    return np.clip((np.asarray(r, dtype=np.float64) - params.s2) / (params.s1 - params.s2), 0.0, 1.0)


def dtwi(cube: HyperCube, params: DtwiParams) -> ScalarMap:
    """Deep Tissue Water Index, clipped to [0, 1]."""
    if cube.quantity != "absorbance":
        raise ParameterError(f"DTWI needs an absorbance cube, got {cube.quantity!r}")
    r = water_band_ratio(cube, params.numerator_nm, params.denominator_nm)
    vals = np.where(r.mask, dtwi_from_ratio(np.nan_to_num(r.values), params), np.nan)
    return ScalarMap(vals, r.mask, "DTWI", "1", cube.provenance + ("dtwi",))


def calibrate_dtwi(cube: HyperCube, labels: LabelMap, high_class: int = 0,
                   low_class: int | None = None, **windows) -> DtwiParams:
    """Anchor s1 / s2 at the mean ratio of the unburned / full-thickness classes."""
    low_class = labels.k - 1 if low_class is None else low_class
    r = water_band_ratio(cube, **windows)
    sel = r.mask & labels.mask
    s1 = float(np.mean(r.values[sel & (labels.labels == high_class)]))
    s2 = float(np.mean(r.values[sel & (labels.labels == low_class)]))
    return DtwiParams(s1, s2, **windows)


@dataclass(frozen=True)
class ExtinctionTable:
    wavelengths_nm: np.ndarray
    eps_hbo2: np.ndarray
    eps_hb: np.ndarray
    version: str = "v1"

    def __post_init__(self) -> None:
        if np.any(self.eps_hbo2 <= 0) or np.any(self.eps_hb <= 0):
            raise ParameterError("extinction coefficients must be positive")
        if self.wavelengths_nm[0] > 500.0 or self.wavelengths_nm[-1] < 1000.0:
            raise ParameterError("extinction table must cover at least 500-1000 nm")

    def at(self, wavelengths) -> tuple[np.ndarray, np.ndarray]:
        wl = np.asarray(wavelengths, dtype=np.float64)
        if wl.min() < self.wavelengths_nm[0] or wl.max() > self.wavelengths_nm[-1]:
            raise RangeError("requested wavelengths fall outside the extinction table")
        return (np.interp(wl, self.wavelengths_nm, self.eps_hbo2),
                np.interp(wl, self.wavelengths_nm, self.eps_hb))


def load_extinction_table(path: str | Path | None = None) -> ExtinctionTable:
    if path is None:
        with resources.as_file(resources.files("burnscope") / "data" / EXTINCTION_ASSET) as p:
            cols = read_columns_csv(p, ("wavelength_nm", "eps_hbo2", "eps_hb"))
        version = "v1"
    else:
        cols = read_columns_csv(path, ("wavelength_nm", "eps_hbo2", "eps_hb"))
        version = Path(path).stem
    return ExtinctionTable(cols["wavelength_nm"], cols["eps_hbo2"], cols["eps_hb"], version)


def hemoglobin_fit(cube: HyperCube, table: ExtinctionTable,
                   window: tuple[float, float] = DEFAULT_STO2_WINDOW) -> np.ndarray:
    """Non-negative (c_HbO2, c_Hb, offset) per pixel; (rows, cols, 3), NaN on masked pixels."""
    lo, hi = window
    if lo < cube.grid.min or hi > cube.grid.max:
        raise RangeError(f"StO2 window {lo}-{hi} nm exceeds the cube grid")
    idx = cube.grid.indices_in(lo, hi)
    if idx.size < 3:
        raise RangeError(f"StO2 window {lo}-{hi} nm holds {idx.size} bands; need >= 3")
    e1, e2 = table.at(cube.wavelengths[idx])
    design = np.column_stack([e1, e2, np.ones_like(e1)])
    scale = np.linalg.norm(design, axis=0)
    design = design / scale
    if np.linalg.matrix_rank(design, tol=1e-8) < 3:
        raise FitError(f"extinction table is degenerate on {lo}-{hi} nm")
    coef = np.full(cube.data.shape[:2] + (3,), np.nan)
    targets = cube.data[..., idx][cube.mask]
    coef[cube.mask] = kernels.nnls_batch(design, targets) / scale
    return coef


def sto2(cube: HyperCube, table: ExtinctionTable,
         window: tuple[float, float] = DEFAULT_STO2_WINDOW) -> ScalarMap:
    """Tissue oxygen saturation from a non-negative two-hemoglobin + offset fit."""
    if cube.quantity != "absorbance":
        raise ParameterError(f"StO2 needs an absorbance cube, got {cube.quantity!r}")
    coef = hemoglobin_fit(cube, table, window)
    total = coef[..., 0] + coef[..., 1]
    ok = cube.mask & (total >= 1e-9)
    s = np.where(ok, np.clip(coef[..., 0] / np.where(ok, total, 1.0), 0.0, 1.0), np.nan)
    return ScalarMap(s, ok, "StO2", "fraction", cube.provenance + ("sto2",))


def spectral_derivative(cube: HyperCube, order: int = 1, window: int = 11,
                        polyorder: int = 3) -> HyperCube:
    """Savitzky-Golay derivative along wavelength, in units per nm."""
    if order not in (1, 2):
        raise ParameterError(f"derivative order must be 1 or 2, got {order}")
    check_window(window, polyorder, cube.bands, deriv=order)
    M = savgol_matrix(cube.wavelengths, window, polyorder, order)
    return cube.derive(apply_along_bands(cube.data, M), f"spectral_derivative_{order}",
                       quantity="derivative")
