"""Laser speckle contrast: temporal/spatial contrast, perfusion index, and a simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ScalarMap
from .errors import ParameterError

K_FLOOR = 1e-3
_MIN_MEAN = 1e-9


@dataclass(frozen=True)
class FrameStack:
    frames: np.ndarray  # (N, rows, cols)
    exposure_s: float = 1e-3
    rate_hz: float = 10.0

    def __post_init__(self) -> None:
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 3:
            raise ParameterError(f"frame stack must be (N, rows, cols), got {f.shape}")
        if f.shape[0] < 2:
            raise ParameterError(f"frame stack needs N >= 2 frames, got {f.shape[0]}")
        if not np.all(np.isfinite(f)) or np.any(f < 0):
            raise ParameterError("speckle intensities must be finite and non-negative")
        object.__setattr__(self, "frames", f)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]


@dataclass(frozen=True)
class FlowMap:
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ParameterError("flow map must be a finite, non-negative 2-D array")
        object.__setattr__(self, "values", v)


def temporal_contrast(stack: FrameStack) -> ScalarMap:
    """K_t = sigma_t / <I_t> per pixel over the N frames (population sigma)."""
    mean = stack.frames.mean(axis=0)
    std = stack.frames.std(axis=0)
    ok = mean >= _MIN_MEAN
    k = np.where(ok, std / np.where(ok, mean, 1.0), np.nan)
    return ScalarMap(k, ok, "K_temporal", "1", ("temporal_contrast",))


def spatial_contrast(stack: FrameStack, window: int = 7) -> ScalarMap:
    """Sliding-window K_s = sigma/mu per frame, averaged over frames.

    Windows are clipped at the image border.
    """
    rows, cols = stack.shape
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"spatial window must be odd and >= 3, got {window}")
    if window > rows or window > cols:
        raise ParameterError(f"window {window} exceeds image {rows}x{cols}")
    half = window // 2
    acc = np.zeros((rows, cols))
    n = np.zeros((rows, cols))
    for frame in stack.frames:
        mu, sd = kernels.window_stats(frame, half)
        ok = mu >= _MIN_MEAN
        acc += np.where(ok, sd / np.where(ok, mu, 1.0), 0.0)
        n += ok
    ok = n > 0
    k = np.where(ok, acc / np.where(ok, n, 1.0), np.nan)
    return ScalarMap(k, ok, "K_spatial", "1", ("spatial_contrast",))


def perfusion_index(K: ScalarMap, k_floor: float = K_FLOOR) -> ScalarMap:
    """PI = 1 / K**2, saturating at 1 / k_floor**2."""
    v = K.values
    if np.any(v[K.mask] < 0):
        raise ParameterError("speckle contrast must be non-negative")
    kk = np.maximum(np.where(K.mask, v, 1.0), k_floor)
    pi = np.where(K.mask, 1.0 / (kk * kk), np.nan)
    return ScalarMap(pi, K.mask, "perfusion_index", "a.u.", K.provenance + ("perfusion_index",))


def simulate_speckle(flow: FlowMap, n_frames: int = 64, seed: int = 0,
                     exposure_s: float = 1e-3, rate_hz: float = 10.0,
                     substeps: int = 32, illumination: np.ndarray | None = None) -> FrameStack:
    """Exposure-integrated dynamic speckle.

    Each pixel carries a unit-power complex Gaussian field evolving as an AR(1)
    process with decorrelation rate ``flow / exposure_s``; a frame is the
    exposure average of |E|^2 times a static speckle amplitude. Faster flow
    blurs more speckle within one exposure and lowers the frame-to-frame
    contrast; zero flow freezes the field.
    """
    if n_frames < 2:
        raise ParameterError(f"need at least 2 frames, got {n_frames}")
    if substeps < 1:
        raise ParameterError("substeps must be >= 1")
    rng = np.random.default_rng(seed)
    v = flow.values
    rows, cols = v.shape
    rate = v / exposure_s
    dt = exposure_s / substeps
    gap = max(1.0 / rate_hz - exposure_s, 0.0)
    rho_sub = np.exp(-rate * dt)
    rho_gap = np.exp(-rate * gap)
    inn_sub = np.sqrt(1.0 - rho_sub ** 2)
    inn_gap = np.sqrt(1.0 - rho_gap ** 2)
    static = rng.exponential(1.0, size=(rows, cols)) + 0.05
    if illumination is not None:
        static = static * np.asarray(illumination, dtype=np.float64)

    def cgauss() -> np.ndarray:
        return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)

    field = cgauss()
    frames = np.empty((n_frames, rows, cols))
    for f in range(n_frames):
        if f:
            field = rho_gap * field + inn_gap * cgauss()
        acc = np.zeros((rows, cols))
        for s in range(substeps):
            acc += field.real ** 2 + field.imag ** 2
            if s + 1 < substeps:
                field = rho_sub * field + inn_sub * cgauss()
        frames[f] = static * acc / substeps
    return FrameStack(frames, exposure_s, rate_hz)
