"""Spectral data model: wavelength grids, datacubes, per-pixel maps.

Cubes and maps are immutable. Every operation returns a new object and
appends its own name to the provenance trail.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError, RangeError, ShapeError

INSTRUMENT_MIN_NM = 350.0
INSTRUMENT_MAX_NM = 2500.0
MODEL_MIN_NM = 400.0
MODEL_MAX_NM = 2100.0

QUANTITIES = ("counts", "reflectance", "absorbance", "normalized", "derivative")

# range checks tolerate float noise from grid construction
_RANGE_TOL = 1e-9

LABEL_SENTINEL = np.iinfo(np.uint16).max


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WavelengthGrid:
    """Strictly increasing band centers in nanometres."""

    wavelengths_nm: np.ndarray

    def __post_init__(self) -> None:
        wl = np.asarray(self.wavelengths_nm, dtype=np.float64).ravel()
        if wl.size < 2:
            raise ParameterError("wavelength grid needs at least 2 bands")
        if not np.all(np.isfinite(wl)):
            raise ParameterError("wavelength grid contains non-finite values")
        if np.any(np.diff(wl) <= 0):
            raise ParameterError("wavelength grid must be strictly increasing")
        if wl[0] < INSTRUMENT_MIN_NM - _RANGE_TOL or wl[-1] > INSTRUMENT_MAX_NM + _RANGE_TOL:
            raise RangeError(
                f"wavelengths {wl[0]:.3f}-{wl[-1]:.3f} nm fall outside "
                f"the {INSTRUMENT_MIN_NM:g}-{INSTRUMENT_MAX_NM:g} nm envelope"
            )
        object.__setattr__(self, "wavelengths_nm", _frozen(wl))

    @classmethod
    def linspace(cls, start: float, stop: float, n: int) -> "WavelengthGrid":
        return cls(np.linspace(start, stop, int(n)))

    @classmethod
    def arange(cls, start: float, stop: float, step: float) -> "WavelengthGrid":
        n = int(round((stop - start) / step)) + 1
        return cls(start + step * np.arange(n))

    def __len__(self) -> int:
        return self.wavelengths_nm.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WavelengthGrid):
            return NotImplemented
        return np.array_equal(self.wavelengths_nm, other.wavelengths_nm)

    def __hash__(self) -> int:
        return hash(self.wavelengths_nm.tobytes())

    @property
    def min(self) -> float:
        return float(self.wavelengths_nm[0])

    @property
    def max(self) -> float:
        return float(self.wavelengths_nm[-1])

    def indices_in(self, lo: float, hi: float) -> np.ndarray:
        wl = self.wavelengths_nm
        return np.flatnonzero((wl >= lo - _RANGE_TOL) & (wl <= hi + _RANGE_TOL))

    def nearest_index(self, wavelength: float) -> int:
        return int(np.argmin(np.abs(self.wavelengths_nm - wavelength)))


@dataclass(frozen=True)
class HyperCube:
    """rows x cols x bands volume over a wavelength grid.

    ``mask`` is True on tissue pixels; statistics only ever see those.
    """

    data: np.ndarray
    grid: WavelengthGrid
    quantity: str = "reflectance"
    mask: np.ndarray | None = None
    provenance: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeError(f"cube data must be 3-D, got shape {data.shape}")
        if data.shape[2] != len(self.grid):
            raise ShapeError(
                f"band count {data.shape[2]} does not match grid length {len(self.grid)}"
            )
        if self.quantity not in QUANTITIES:
            raise ParameterError(f"unknown quantity tag {self.quantity!r}")
        mask = self.mask
        if mask is None:
            mask = np.ones(data.shape[:2], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != data.shape[:2]:
            raise ShapeError(f"mask shape {mask.shape} != spatial shape {data.shape[:2]}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def wavelengths(self) -> np.ndarray:
        return self.grid.wavelengths_nm

    def pixels(self) -> np.ndarray:
        """Unmasked spectra as an (n, bands) array, row-major order."""
        return self.data[self.mask]

    def derive(self, data: np.ndarray, step: str, **changes) -> "HyperCube":
        return replace(self, data=data, provenance=self.provenance + (step,), **changes)


@dataclass(frozen=True)
class ScalarMap:
    """Per-pixel float index. Masked pixels hold NaN, never zero."""

    values: np.ndarray
    mask: np.ndarray | None = None
    name: str = ""
    units: str = ""
    provenance: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"scalar map must be 2-D, got shape {v.shape}")
        mask = np.isfinite(v) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != v.shape:
            raise ShapeError("mask shape does not match map")
        mask = mask & np.isfinite(v)
        v[~mask] = np.nan
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel integer class labels in ``[0, k)``; masked pixels hold the sentinel."""

    labels: np.ndarray
    k: int
    mask: np.ndarray | None = None
    provenance: tuple[str, ...] = ()
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        lab = np.array(self.labels)
        if lab.ndim != 2:
            raise ShapeError(f"label map must be 2-D, got shape {lab.shape}")
        mask = (lab != LABEL_SENTINEL) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != lab.shape:
            raise ShapeError("mask shape does not match labels")
        lab = lab.astype(np.int64)
        if np.any(lab[mask] < 0) or np.any(lab[mask] >= self.k):
            raise ParameterError(f"labels must lie in [0, {self.k}) on unmasked pixels")
        out = np.full(lab.shape, LABEL_SENTINEL, dtype=np.uint16)
        out[mask] = lab[mask]
        object.__setattr__(self, "labels", _frozen(out))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels[self.mask].astype(np.int64), minlength=self.k)


def _interp_weights(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    i1 = np.searchsorted(src, dst, side="left")
    i1 = np.clip(i1, 1, src.size - 1)
    i0 = i1 - 1
    t = (dst - src[i0]) / (src[i1] - src[i0])
    t = np.clip(t, 0.0, 1.0)
    return i0, i1, t


def resample_to_grid(cube: HyperCube, target: WavelengthGrid) -> HyperCube:
    """Linearly interpolate every pixel spectrum onto ``target``."""
    src = cube.wavelengths
    dst = target.wavelengths_nm
    if dst[0] < src[0] - _RANGE_TOL or dst[-1] > src[-1] + _RANGE_TOL:
        raise RangeError(
            f"target grid {dst[0]:g}-{dst[-1]:g} nm extends beyond source "
            f"{src[0]:g}-{src[-1]:g} nm"
        )
    i0, i1, t = _interp_weights(src, dst)
    d = cube.data
    out = d[..., i0] * (1.0 - t) + d[..., i1] * t
    return cube.derive(out, "resample_to_grid", grid=target)


def crop_bands(cube: HyperCube, lo: float, hi: float) -> HyperCube:
    if not lo < hi:
        raise ParameterError(f"crop window requires lo < hi, got {lo} >= {hi}")
    idx = cube.grid.indices_in(lo, hi)
    if idx.size == 0:
        raise RangeError(f"no bands of {cube.grid.min:g}-{cube.grid.max:g} nm fall in [{lo}, {hi}]")
    if idx.size < 2:
        raise RangeError(f"crop [{lo}, {hi}] keeps a single band")
    grid = WavelengthGrid(cube.wavelengths[idx])
    return cube.derive(cube.data[..., idx], "crop_bands", grid=grid)


def merge_cubes(vnir: HyperCube, swir: HyperCube,
                lo: float = MODEL_MIN_NM, hi: float = MODEL_MAX_NM) -> HyperCube:
    """Concatenate two spectrometers onto one axis.

    Where the grids overlap the SWIR samples are kept and VNIR samples at or
    above the first SWIR band are dropped. The result is restricted to the
    shared modelling range ``[lo, hi]``.
    """
    if vnir.data.shape[:2] != swir.data.shape[:2]:
        raise ShapeError(
            f"spatial dims differ: {vnir.data.shape[:2]} vs {swir.data.shape[:2]}"
        )
    if not np.array_equal(vnir.mask, swir.mask):
        raise ShapeError("VNIR and SWIR masks differ")
    if vnir.quantity != swir.quantity:
        raise ParameterError(f"quantity mismatch: {vnir.quantity} vs {swir.quantity}")
    if vnir.grid.min >= swir.grid.min:
        raise RangeError("VNIR grid must start below the SWIR grid")
    keep = vnir.wavelengths < swir.grid.min
    wl = np.concatenate([vnir.wavelengths[keep], swir.wavelengths])
    data = np.concatenate([vnir.data[..., keep], swir.data], axis=2)
    sel = (wl >= lo - _RANGE_TOL) & (wl <= hi + _RANGE_TOL)
    if sel.sum() < 2:
        raise RangeError(f"merged grid has fewer than 2 bands inside [{lo}, {hi}]")
    prov = tuple(vnir.provenance) + tuple(f"swir:{p}" for p in swir.provenance) + ("merge_cubes",)
    return HyperCube(data[..., sel], WavelengthGrid(wl[sel]), vnir.quantity, vnir.mask, prov)


def stack_maps(maps: Iterable[ScalarMap]) -> np.ndarray:
    return np.stack([m.values for m in maps])


def masked_mean(values: np.ndarray, mask: np.ndarray, labels: Sequence[int] | np.ndarray,
                k: int) -> np.ndarray:
    """Per-class mean of ``values`` over pixels that are unmasked in ``mask``."""
    labels = np.asarray(labels)
    out = np.full(k, np.nan)
    for c in range(k):
        sel = mask & (labels == c) & np.isfinite(values)
        if sel.any():
            out[c] = float(np.mean(values[sel]))
    return out
