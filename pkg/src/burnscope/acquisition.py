"""Raster-scan acquisition: gantry plan, phantom, sensor-pod simulator, calibration.

The simulator and the compensator share one illumination law: counts above
dark scale with ``(d_ref / d)**2`` where ``d`` is the aperture-to-tissue
distance at the dwell midpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chromophores import CHROMOPHORES, FIDUCIAL_REFLECTANCE, profile_matrix
from .core import HyperCube, LabelMap, WavelengthGrid
from .errors import CalibrationError, DataQualityError, ParameterError, ShapeError

CLASS_NAMES = ("unburned", "superficial", "deep-partial", "full-thickness")

TOF_RATE_HZ = 10.0
RAIL_TRAVEL_MM = 20.0
MAX_TOF_GAP_S = 0.2

# reference phantom chromophore weights, one row per burn class
# water and HbO2 fall with severity; Hb peaks with stasis in deep-partial
# burns and collagen rises with denaturation, so each class has its own signature
REFERENCE_WEIGHTS = {
    "unburned":       {"water": 1.00, "hbo2": 1.00, "hb": 0.30, "lipid": 0.30, "collagen": 0.30},
    "superficial":    {"water": 0.90, "hbo2": 0.80, "hb": 0.30, "lipid": 0.30, "collagen": 0.65},
    "deep-partial":   {"water": 0.60, "hbo2": 0.45, "hb": 0.70, "lipid": 0.30, "collagen": 0.50},
    "full-thickness": {"water": 0.45, "hbo2": 0.15, "hb": 0.20, "lipid": 0.30, "collagen": 0.90},
}

# classes separated only by water and collagen: VNIR is nearly blind to them
WATER_COLLAGEN_WEIGHTS = {
    "unburned":       {"water": 1.00, "hbo2": 0.70, "hb": 0.35, "lipid": 0.30, "collagen": 0.60},
    "superficial":    {"water": 0.80, "hbo2": 0.70, "hb": 0.35, "lipid": 0.30, "collagen": 0.75},
    "deep-partial":   {"water": 0.60, "hbo2": 0.70, "hb": 0.35, "lipid": 0.30, "collagen": 0.45},
    "full-thickness": {"water": 0.40, "hbo2": 0.70, "hb": 0.35, "lipid": 0.30, "collagen": 0.30},
}

WEIGHT_PRESETS = {"reference": REFERENCE_WEIGHTS, "water_collagen": WATER_COLLAGEN_WEIGHTS}


def concentric_layout(rows: int, cols: int, n_classes: int = 4) -> np.ndarray:
    """Burn-like layout: full-thickness core, rings of decreasing severity outward."""
    r = (np.arange(rows) + 0.5) / rows - 0.5
    c = (np.arange(cols) + 0.5) / cols - 0.5
    # squared-norm rings with equal-ish areas
    rho = np.sqrt(r[:, None] ** 2 + c[None, :] ** 2) / math.sqrt(0.5)
    edges = np.sqrt(np.arange(1, n_classes) / n_classes) * 0.75
    ring = np.searchsorted(edges, rho)
    ring = np.minimum(ring, n_classes - 1)
    return (n_classes - 1 - ring).astype(np.int64)


@dataclass
class PhantomSpec:
    layout: np.ndarray
    weights: dict[str, dict[str, float]] = field(default_factory=lambda: dict(REFERENCE_WEIGHTS))
    class_names: tuple[str, ...] = CLASS_NAMES
    wavelengths: tuple[float, float, float] = (400.0, 2100.0, 2.0)  # start, stop, step nm
    noise_std: float = 0.004
    jitter: float = 0.05
    baseline_absorbance: float = 0.0
    breathing_amplitude_mm: float = 0.0
    breathing_period_s: float = 4.0
    fiducials: tuple[tuple[int, int, int], ...] = ()  # (row, col, size) black squares
    seed: int = 0

    def __post_init__(self) -> None:
        self.layout = np.asarray(self.layout, dtype=np.int64)
        if self.layout.ndim != 2 or self.layout.size == 0:
            raise ParameterError("phantom layout must be a non-empty 2-D label grid")
        k = len(self.class_names)
        if self.layout.min() < 0 or self.layout.max() >= k:
            raise ParameterError(f"layout labels must lie in [0, {k})")
        for name in self.class_names:
            if name not in self.weights:
                raise ParameterError(f"no chromophore weights for class {name!r}")
            for chrom, w in self.weights[name].items():
                if chrom not in CHROMOPHORES:
                    raise ParameterError(f"unknown chromophore {chrom!r}")
                if not w >= 0:
                    raise ParameterError(f"weight {name}/{chrom} must be >= 0, got {w}")
        if self.noise_std < 0 or self.jitter < 0 or self.baseline_absorbance < 0:
            raise ParameterError("noise_std, jitter and baseline_absorbance must be >= 0")
        if self.breathing_period_s <= 0:
            raise ParameterError("breathing period must be positive")
        if abs(self.breathing_amplitude_mm) > RAIL_TRAVEL_MM:
            raise ParameterError("breathing amplitude exceeds the +/-20 mm rail travel")
        self.fiducials = tuple(tuple(int(v) for v in f) for f in self.fiducials)

    @property
    def grid(self) -> WavelengthGrid:
        start, stop, step = self.wavelengths
        return WavelengthGrid.arange(start, stop, step)

    def weight_matrix(self) -> np.ndarray:
        return np.array([[self.weights[n].get(c, 0.0) for c in CHROMOPHORES]
                         for n in self.class_names])

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.tolist(),
            "weights": {k: dict(v) for k, v in self.weights.items()},
            "class_names": list(self.class_names),
            "wavelengths": list(self.wavelengths),
            "noise_std": self.noise_std,
            "jitter": self.jitter,
            "baseline_absorbance": self.baseline_absorbance,
            "breathing_amplitude_mm": self.breathing_amplitude_mm,
            "breathing_period_s": self.breathing_period_s,
            "fiducials": [list(f) for f in self.fiducials],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        shape = d.pop("shape", (48, 48))
        if "layout" not in d:
            d["layout"] = concentric_layout(int(shape[0]), int(shape[1]))
        if isinstance(d.get("weights"), str):
            try:
                d["weights"] = dict(WEIGHT_PRESETS[d["weights"]])
            except KeyError:
                raise ParameterError(f"unknown weight preset {d['weights']!r}") from None
        for key in ("class_names", "wavelengths"):
            if key in d:
                d[key] = tuple(d[key])
        if "fiducials" in d:
            d["fiducials"] = tuple(tuple(f) for f in d["fiducials"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParameterError(f"bad phantom spec: {exc}") from None


def reference_phantom_spec(rows: int = 48, cols: int = 48, **overrides) -> PhantomSpec:
    """The reference four-class burn phantom used for calibration and acceptance."""
    d = {"shape": (rows, cols), "weights": "reference", "baseline_absorbance": 0.1}
    d.update(overrides)
    return PhantomSpec.from_dict(d)


def generate_phantom(spec: PhantomSpec) -> tuple[HyperCube, LabelMap]:
    """Reflectance truth cube R = exp(-sum_c w_c G_c - baseline) + noise, plus labels."""
    rng = np.random.default_rng(spec.seed)
    grid = spec.grid
    basis = profile_matrix(grid.wavelengths_nm)  # (C, bands)
    w_class = spec.weight_matrix()  # (K, C)
    rows, cols = spec.layout.shape
    w = w_class[spec.layout]  # (rows, cols, C)
    if spec.jitter > 0:
        w = w * (1.0 + spec.jitter * rng.standard_normal(w.shape))
        w = np.maximum(w, 0.0)
    atten = w @ basis + spec.baseline_absorbance
    refl = np.exp(-atten)
    fid = np.zeros((rows, cols), dtype=bool)
    for r0, c0, size in spec.fiducials:
        fid[r0:r0 + size, c0:c0 + size] = True
    refl[fid] = FIDUCIAL_REFLECTANCE
    if spec.noise_std > 0:
        refl = refl + spec.noise_std * rng.standard_normal(refl.shape)
    cube = HyperCube(refl, grid, "reflectance", None, ("generate_phantom",))
    labels = LabelMap(spec.layout, len(spec.class_names), ~fid, ("generate_phantom",),
                      spec.class_names)
    return cube, labels


@dataclass(frozen=True)
class RasterPlan:
    origin_mm: tuple[float, float]
    width_mm: float
    height_mm: float
    spot_mm: float
    overlap: float
    dwell_s: float
    positions_mm: np.ndarray  # (n, 2) x, y in traversal order
    grid_index: np.ndarray  # (n, 2) row, col of each position
    rows: int
    cols: int
    order: str = "serpentine"

    @property
    def step_mm(self) -> float:
        return self.spot_mm * (1.0 - self.overlap)

    @property
    def n_positions(self) -> int:
        return len(self.positions_mm)

    @property
    def duration_s(self) -> float:
        return self.n_positions * self.dwell_s

    def dwell_midpoints(self) -> np.ndarray:
        """(rows, cols) time in seconds at the middle of each pixel's dwell."""
        t = np.empty((self.rows, self.cols))
        k = np.arange(self.n_positions)
        t[self.grid_index[:, 0], self.grid_index[:, 1]] = (k + 0.5) * self.dwell_s
        return t

    def to_dict(self) -> dict:
        return {
            "origin_mm": list(self.origin_mm),
            "width_mm": self.width_mm,
            "height_mm": self.height_mm,
            "spot_mm": self.spot_mm,
            "overlap": self.overlap,
            "dwell_s": self.dwell_s,
            "order": self.order,
            "rows": self.rows,
            "cols": self.cols,
            "positions_mm": self.positions_mm.tolist(),
            "grid_index": self.grid_index.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RasterPlan":
        return cls(tuple(d["origin_mm"]), d["width_mm"], d["height_mm"], d["spot_mm"],
                   d["overlap"], d["dwell_s"], np.asarray(d["positions_mm"], dtype=float),
                   np.asarray(d["grid_index"], dtype=np.int64), d["rows"], d["cols"],
                   d.get("order", "serpentine"))


def _tile_count(extent: float, step: float) -> int:
    # tolerance keeps exact multiples (10 / 1.0) from rounding up
    return max(1, math.ceil(extent / step - 1e-9))


def plan_raster(width_mm: float, height_mm: float, spot_mm: float, overlap: float = 0.0,
                dwell_s: float = 0.2, origin_mm: Sequence[float] = (0.0, 0.0)) -> RasterPlan:
    """Decompose a rectangle into a serpentine list of spot positions.

    Spot centres are spaced ``spot * (1 - overlap)`` apart and the lattice is
    centred in the region.
    """
    if width_mm <= 0 or height_mm <= 0 or spot_mm <= 0 or dwell_s <= 0:
        raise ParameterError("region dims, spot and dwell must be positive")
    if not 0.0 <= overlap < 0.5:
        raise ParameterError(f"overlap must be in [0, 0.5), got {overlap}")
    x0, y0 = float(origin_mm[0]), float(origin_mm[1])
    step = spot_mm * (1.0 - overlap)
    if spot_mm >= width_mm and spot_mm >= height_mm:
        nx = ny = 1
    else:
        nx = _tile_count(width_mm, step)
        ny = _tile_count(height_mm, step)
    xs = x0 + (width_mm - (nx - 1) * step) / 2.0 + step * np.arange(nx)
    ys = y0 + (height_mm - (ny - 1) * step) / 2.0 + step * np.arange(ny)
    pos, idx = [], []
    for r in range(ny):
        cols = range(nx) if r % 2 == 0 else range(nx - 1, -1, -1)
        for c in cols:
            pos.append((xs[c], ys[r]))
            idx.append((r, c))
    return RasterPlan((x0, y0), float(width_mm), float(height_mm), float(spot_mm),
                      float(overlap), float(dwell_s), np.array(pos), np.array(idx, dtype=np.int64),
                      ny, nx)


def plan_for_shape(rows: int, cols: int, spot_mm: float = 1.0, overlap: float = 0.0,
                   dwell_s: float = 0.2) -> RasterPlan:
    """Plan whose lattice is exactly rows x cols."""
    step = spot_mm * (1.0 - overlap)
    plan = plan_raster(cols * step, rows * step, spot_mm, overlap, dwell_s)
    if (plan.rows, plan.cols) != (rows, cols):
        raise ShapeError(f"plan lattice {plan.rows}x{plan.cols} != {rows}x{cols}")
    return plan


@dataclass(frozen=True)
class ReferencePair:
    wavelengths_nm: np.ndarray
    dark: np.ndarray
    white: np.ndarray

    def validate(self) -> None:
        bad = np.flatnonzero(~(self.white > self.dark))
        if bad.size:
            wl = self.wavelengths_nm[bad[0]]
            raise CalibrationError(
                f"white reference <= dark at band {bad[0]} ({wl:.2f} nm)"
                + (f" and {bad.size - 1} more" if bad.size > 1 else "")
            )


def default_references(grid: WavelengthGrid) -> ReferencePair:
    """Smooth lamp x detector response for the white target over a flat dark level."""
    wl = grid.wavelengths_nm
    dark = 900.0 + 0.05 * (wl - 400.0)
    response = 30000.0 * np.exp(-0.5 * ((wl - 1100.0) / 650.0) ** 2) + 2500.0
    return ReferencePair(wl.copy(), dark, dark + response)


@dataclass(frozen=True)
class TofLog:
    timestamps_s: np.ndarray
    distances_mm: np.ndarray
    d_ref_mm: float

    def __post_init__(self) -> None:
        t = np.asarray(self.timestamps_s, dtype=float)
        d = np.asarray(self.distances_mm, dtype=float)
        if t.shape != d.shape or t.ndim != 1:
            raise ShapeError("ToF timestamps and distances must be 1-D and equal length")
        if t.size and np.any(np.diff(t) <= 0):
            raise DataQualityError("ToF timestamps must be strictly increasing")
        if d.size and np.any(np.abs(d - self.d_ref_mm) > RAIL_TRAVEL_MM + 1e-9):
            raise DataQualityError("ToF distance outside the +/-20 mm rail travel")
        object.__setattr__(self, "timestamps_s", t)
        object.__setattr__(self, "distances_mm", d)


def breathing_distance(t: np.ndarray, d_ref_mm: float, amplitude_mm: float,
                       period_s: float) -> np.ndarray:
    return d_ref_mm + amplitude_mm * np.sin(2.0 * np.pi * np.asarray(t) / period_s)


def _check_plan(cube: HyperCube, plan: RasterPlan) -> None:
    if (plan.rows, plan.cols) != (cube.rows, cube.cols):
        raise ShapeError(f"plan lattice {plan.rows}x{plan.cols} does not cover cube "
                         f"{cube.rows}x{cube.cols}")


def simulate_scan(truth: HyperCube, plan: RasterPlan, spec: PhantomSpec,
                  refs: ReferencePair | None = None,
                  d_ref_mm: float = 100.0) -> tuple[HyperCube, ReferencePair, TofLog]:
    """Raw detector counts for a reflectance truth cube scanned along ``plan``."""
    _check_plan(truth, plan)
    refs = default_references(truth.grid) if refs is None else refs
    refs.validate()
    t_mid = plan.dwell_midpoints()
    d = breathing_distance(t_mid, d_ref_mm, spec.breathing_amplitude_mm, spec.breathing_period_s)
    scale = (d_ref_mm / d) ** 2
    span = refs.white - refs.dark
    counts = refs.dark + truth.data * span * scale[..., None]
    n_log = int(math.floor(plan.duration_s * TOF_RATE_HZ + 1e-9)) + 1
    stamps = np.arange(n_log) / TOF_RATE_HZ
    log = TofLog(stamps, breathing_distance(stamps, d_ref_mm, spec.breathing_amplitude_mm,
                                            spec.breathing_period_s), d_ref_mm)
    raw = HyperCube(counts, truth.grid, "counts", truth.mask,
                    truth.provenance + ("simulate_scan",))
    return raw, refs, log


def tof_compensate(raw: HyperCube, tof: TofLog | None, plan: RasterPlan,
                   refs: ReferencePair) -> HyperCube:
    """Undo distance attenuation using the ToF sample nearest each dwell midpoint."""
    _check_plan(raw, plan)
    if tof is None or tof.timestamps_s.size == 0:
        raise DataQualityError("no ToF log supplied for distance compensation")
    t = tof.timestamps_s
    if t[0] > MAX_TOF_GAP_S or t[-1] < plan.duration_s - MAX_TOF_GAP_S:
        raise DataQualityError(
            f"ToF log {t[0]:.2f}-{t[-1]:.2f} s does not span the {plan.duration_s:.2f} s scan")
    gaps = np.diff(t)
    if gaps.size and gaps.max() > MAX_TOF_GAP_S + 1e-9:
        at = t[int(np.argmax(gaps))]
        raise DataQualityError(f"ToF log gap of {gaps.max():.3f} s at t={at:.2f} s")
    t_mid = plan.dwell_midpoints()
    j = np.clip(np.searchsorted(t, t_mid), 1, t.size - 1) if t.size > 1 else np.zeros_like(t_mid, int)
    if t.size > 1:
        j = np.where(np.abs(t[j - 1] - t_mid) <= np.abs(t[j] - t_mid), j - 1, j)
    d = tof.distances_mm[j]
    scale = (d / tof.d_ref_mm) ** 2
    out = refs.dark + (raw.data - refs.dark) * scale[..., None]
    return raw.derive(out, "tof_compensate")


def counts_to_reflectance(raw: HyperCube, refs: ReferencePair) -> HyperCube:
    """R = (raw - dark) / (white - dark), band by band."""
    refs.validate()
    if refs.dark.shape[0] != raw.bands or not np.allclose(refs.wavelengths_nm, raw.wavelengths):
        raise ShapeError("reference spectra are not on the cube's wavelength grid")
    refl = (raw.data - refs.dark) / (refs.white - refs.dark)
    return raw.derive(refl, "counts_to_reflectance", quantity="reflectance")
