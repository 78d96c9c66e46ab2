"""Registration, masking, smoothing and normalisation of datacubes and maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import LABEL_SENTINEL, HyperCube, LabelMap, ScalarMap
from .errors import (DegenerateFitError, EmptyTissueError, RangeError,
                     ShapeError, StatisticsError)
from .io import read_columns_csv
from .savgol import apply_along_bands, check_window, savgol_matrix, window_table_lengths

# sub-pixel noise below this is treated as an exact grid hit when warping
_SNAP = 1e-9


@dataclass(frozen=True)
class AffineTransform2D:
    """x' = A @ x + t in pixel coordinates, with x = (col, row)."""

    matrix: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        A = np.asarray(self.matrix, dtype=np.float64).reshape(2, 2)
        t = np.asarray(self.translation, dtype=np.float64).reshape(2)
        if abs(np.linalg.det(A)) <= 1e-9:
            raise DegenerateFitError("affine linear part is singular")
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_rotation(cls, degrees: float, translation=(0.0, 0.0),
                      center=(0.0, 0.0)) -> "AffineTransform2D":
        th = np.deg2rad(degrees)
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        c = np.asarray(center, dtype=float)
        return cls(R, c - R @ c + np.asarray(translation, dtype=float))

    def apply(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return p @ self.matrix.T + self.translation

    def inverse(self) -> "AffineTransform2D":
        Ai = np.linalg.inv(self.matrix)
        return AffineTransform2D(Ai, -Ai @ self.translation)

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist(), "translation": self.translation.tolist()}


def fit_affine(src, dst) -> AffineTransform2D:
    """Least-squares affine transform taking ``src`` points onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ShapeError("point sets must both be (n, 2)")
    if src.shape[0] < 3:
        raise DegenerateFitError(f"need at least 3 point pairs, got {src.shape[0]}")
    X = np.hstack([src, np.ones((src.shape[0], 1))])
    sv = np.linalg.svd(X - np.r_[src.mean(axis=0), 0.0], compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateFitError("fiducial points are collinear")
    P, *_ = np.linalg.lstsq(X, dst, rcond=None)
    return AffineTransform2D(P[:2].T, P[2])


def read_point_pairs(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    cols = read_columns_csv(path, ("src_x", "src_y", "dst_x", "dst_y"))
    src = np.column_stack([cols["src_x"], cols["src_y"]])
    dst = np.column_stack([cols["dst_x"], cols["dst_y"]])
    return src, dst


def _source_coords(T: AffineTransform2D, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = shape
    rr, cc = np.mgrid[0:rows, 0:cols]
    pts = np.column_stack([cc.ravel(), rr.ravel()]).astype(np.float64)
    src = T.inverse().apply(pts)
    xs = src[:, 0].reshape(shape)
    ys = src[:, 1].reshape(shape)
    for a in (xs, ys):
        near = np.abs(a - np.round(a)) < _SNAP
        a[near] = np.round(a[near])
    return xs, ys


def warp_map(m: ScalarMap | LabelMap, T: AffineTransform2D,
             shape: tuple[int, int] | None = None) -> ScalarMap | LabelMap:
    """Resample a map through ``T`` (map coords -> output coords) by inverse mapping.

    Scalar maps are bilinear, label maps nearest-neighbour. Output pixels whose
    source falls outside the map, or touches a masked pixel, are masked.
    """
    shape = m.shape if shape is None else tuple(shape)
    rows_in, cols_in = m.shape
    xs, ys = _source_coords(T, shape)
    inside = (xs >= 0) & (xs <= cols_in - 1) & (ys >= 0) & (ys <= rows_in - 1)
    if isinstance(m, LabelMap):
        xi = np.clip(np.round(xs).astype(np.int64), 0, cols_in - 1)
        yi = np.clip(np.round(ys).astype(np.int64), 0, rows_in - 1)
        ok = inside & m.mask[yi, xi]
        lab = np.where(ok, m.labels[yi, xi], LABEL_SENTINEL)
        return LabelMap(lab, m.k, ok, m.provenance + ("warp_map",), m.class_names)
    vals = np.where(m.mask, m.values, 0.0)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, cols_in - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, rows_in - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    x1 = np.minimum(x0 + 1, cols_in - 1)
    y1 = np.minimum(y0 + 1, rows_in - 1)
    out = np.zeros(shape)
    ok = inside.copy()
    for yy, xx, w in ((y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
                      (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx)):
        used = w > 0
        ok &= ~used | m.mask[yy, xx]
        out = out + w * vals[yy, xx]
    return ScalarMap(np.where(ok, out, np.nan), ok, m.name, m.units, m.provenance + ("warp_map",))


def mask_background(cube: HyperCube, threshold_low: float = 0.05,
                    threshold_high: float = np.inf, band_range=(400.0, 900.0)) -> HyperCube:
    """Mask pixels whose mean visible reflectance falls outside the thresholds."""
    idx = cube.grid.indices_in(*band_range)
    if idx.size == 0:
        raise RangeError(f"no bands inside {band_range[0]}-{band_range[1]} nm for masking")
    level = cube.data[..., idx].mean(axis=2)
    keep = (level >= threshold_low) & (level <= threshold_high) & cube.mask
    if not keep.any():
        raise EmptyTissueError("background masking removed every pixel")
    return cube.derive(cube.data, "mask_background", mask=keep)


def clip_reflectance(cube: HyperCube, lo: float = 0.0, hi: float | None = None) -> HyperCube:
    return cube.derive(np.clip(cube.data, lo, hi), "clip_reflectance")


def smooth_spectra(cube: HyperCube, window: int, polyorder: int,
                   window_table: Sequence[Sequence[float]] | None = None) -> HyperCube:
    """Savitzky-Golay smoothing along the spectral axis.

    ``window_table`` rows ``(lo_nm, hi_nm, window)`` override the window in
    selected wavelength ranges.
    """
    check_window(window, polyorder, cube.bands)
    windows = window_table_lengths(cube.wavelengths, window, window_table)
    for w in np.unique(windows):
        check_window(int(w), polyorder, cube.bands)
    M = savgol_matrix(cube.wavelengths, windows, polyorder, 0)
    return cube.derive(apply_along_bands(cube.data, M), "smooth_spectra")


def l2_normalize(cube: HyperCube) -> HyperCube:
    """Divide each tissue spectrum by its Euclidean norm; zero-norm pixels get masked."""
    norms = np.sqrt(np.einsum("ijk,ijk->ij", cube.data, cube.data))
    mask = cube.mask & (norms > 0)
    safe = np.where(mask, norms, 1.0)
    out = np.where(mask[..., None], cube.data / safe[..., None], 0.0)
    return cube.derive(out, "l2_normalize", mask=mask, quantity="normalized")


def zscore_bands(cube: HyperCube) -> HyperCube:
    """Per-band standardisation with population statistics over tissue pixels."""
    n = int(cube.mask.sum())
    if n < 2:
        raise StatisticsError(f"z-scoring needs at least 2 unmasked pixels, got {n}")
    px = cube.pixels()
    mean = px.mean(axis=0)
    std = px.std(axis=0)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(flat, 1.0, std)
    z = (cube.data - mean) / safe
    z[..., flat] = 0.0
    z = np.where(cube.mask[..., None], z, 0.0)
    return cube.derive(z, "zscore_bands", quantity="normalized")


def zscore_matrix(x: np.ndarray) -> np.ndarray:
    """Column-wise population z-score of an (n, d) matrix; constant columns -> 0."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    z = (x - mean) / np.where(flat, 1.0, std)
    z[:, flat] = 0.0
    return z
