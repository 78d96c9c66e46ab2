"""Absorption profiles for the tissue phantom and the StO2 fit.

Water, lipid and collagen are sums of Gaussian lobes (natural-log
attenuation per unit weight). The two hemoglobin species use a smooth
parametric molar-extinction model; the phantom scales it by
``HB_EPS_REF`` so the phantom and the StO2 fit share one spectral shape.
"""

from __future__ import annotations

import numpy as np

CHROMOPHORES = ("water", "hbo2", "hb", "lipid", "collagen")

# (centre nm, sigma nm, amplitude)
LOBES: dict[str, tuple[tuple[float, float, float], ...]] = {
    "water": ((970.0, 30.0, 0.03), (1200.0, 45.0, 0.25), (1450.0, 60.0, 1.0), (1940.0, 70.0, 1.6)),
    "lipid": ((930.0, 25.0, 0.10), (1210.0, 30.0, 0.10)),
    "collagen": ((1500.0, 100.0, 0.50), (2050.0, 80.0, 0.80)),
}

# Molar extinction, cm^-1/M: flat floor + (centre, sigma, height) lobes.
HEMOGLOBIN_MODEL: dict[str, tuple[float, tuple[tuple[float, float, float], ...]]] = {
    "hbo2": (250.0, ((500.0, 30.0, 18000.0), (540.0, 12.0, 52000.0),
                     (577.0, 9.0, 54000.0), (930.0, 90.0, 1000.0))),
    "hb": (300.0, ((500.0, 30.0, 20000.0), (555.0, 22.0, 53000.0),
                   (760.0, 18.0, 1300.0), (880.0, 120.0, 500.0))),
}

HB_EPS_REF = 1.0e5

# reflectance of the black fiducial squares
FIDUCIAL_REFLECTANCE = 0.02


def _gauss(wl: np.ndarray, centre: float, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((wl - centre) / sigma) ** 2)


def hemoglobin_extinction(species: str, wavelengths_nm) -> np.ndarray:
    floor, lobes = HEMOGLOBIN_MODEL[species]
    wl = np.asarray(wavelengths_nm, dtype=np.float64)
    out = np.full(wl.shape, floor)
    for c, s, h in lobes:
        out += h * _gauss(wl, c, s)
    return out


def absorption_profile(name: str, wavelengths_nm) -> np.ndarray:
    """Attenuation (natural log) per unit chromophore weight."""
    wl = np.asarray(wavelengths_nm, dtype=np.float64)
    if name in HEMOGLOBIN_MODEL:
        return hemoglobin_extinction(name, wl) / HB_EPS_REF
    if name not in LOBES:
        raise KeyError(f"unknown chromophore {name!r}")
    out = np.zeros(wl.shape)
    for c, s, a in LOBES[name]:
        out += a * _gauss(wl, c, s)
    return out


def profile_matrix(wavelengths_nm) -> np.ndarray:
    """(len(CHROMOPHORES), bands) attenuation basis."""
    return np.stack([absorption_profile(c, wavelengths_nm) for c in CHROMOPHORES])
