"""Truncated-ellipsoid left-ventricle geometry in prolate coordinates.

A ventricle is the volume between two confocal prolate spheroids (focal
length C, transmural coordinates xi_endo < xi_epi), cut off above the basal
plane z = H. Lengths are in cm, volumes in ml. Cavity and wall volumes have
closed forms; ``solve_transmural`` inverts them for the transmural
coordinates, and ``variation_geometry`` rescales the reference shape while
holding both volumes fixed.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NoBracket

# Reference ventricle (end-systolic registration): 44 ml cavity, 136 ml wall.
C_REF = 4.3
H_REF = 2.4
XI_ENDO_REF = 0.371
XI_EPI_REF = 0.678

# Physiological dimension ranges (95% intervals), cm and ml.
ES_RANGES = {"D_lv": (2.8, 4.0), "L_lv": (4.2, 8.6), "B_lv": (2.0, math.inf)}
ED_RANGES = {
    "D_lv": (4.2, 5.8),
    "B_lv": (2.4, 4.4),
    "V": (62.0, 150.0),
    "Vw": (84.0, 213.0),
}

# Upper search bound for transmural coordinates; cosh(3) ~ 10, far beyond
# any physiological shape.
_XI_MAX = 3.0


@dataclass(frozen=True)
class EllipsoidParams:
    """Focal length C (cm), truncation height H (cm), transmural coordinates."""

    C: float
    H: float
    xi_endo: float
    xi_epi: float

    def __post_init__(self):
        if not (self.C > 0):
            raise DomainError("focal length C must be positive")
        if not (0 < self.xi_endo < self.xi_epi):
            raise DomainError("require 0 < xi_endo < xi_epi")
        if not (0 < self.H < self.C * math.cosh(self.xi_endo)):
            raise DomainError("truncation height H must cut the endo spheroid")


@dataclass(frozen=True)
class ClinicalDimensions:
    """LV diameter, total length, basal diameter (cm); cavity/wall volume (ml)."""

    D_lv: float
    L_lv: float
    B_lv: float
    V: float
    Vw: float

    def __post_init__(self):
        vals = (self.D_lv, self.L_lv, self.B_lv, self.V, self.Vw)
        if not all(v > 0 for v in vals):
            raise DomainError("clinical dimensions must be positive")
        if self.B_lv > self.D_lv * (1.0 + 1e-12):
            raise DomainError("basal diameter cannot exceed LV diameter")


@dataclass(frozen=True)
class ShapeVariation:
    """Dimensionless multipliers on the reference H and C."""

    H_tilde: float = 1.0
    C_tilde: float = 1.0

    def __post_init__(self):
        if self.H_tilde <= 0 or self.C_tilde <= 0:
            raise DomainError("shape multipliers must be positive")


def reference_geometry() -> EllipsoidParams:
    return EllipsoidParams(C=C_REF, H=H_REF, xi_endo=XI_ENDO_REF,
                           xi_epi=XI_EPI_REF)


def prolate_point(C: float, xi: float, theta: float, phi: float) -> np.ndarray:
    """Cartesian point (cm) of prolate coordinates (xi, theta, phi)."""
    st = math.sin(theta)
    return np.array([
        C * math.sinh(xi) * st * math.cos(phi),
        C * math.sinh(xi) * st * math.sin(phi),
        C * math.cosh(xi) * math.cos(theta),
    ])


def _segment_volume(C: float, xi: float, H: float) -> float:
    # Spheroid semi-axes a (equatorial), c (polar), truncated at z = H:
    # V = pi*a^2*(2c/3 + H - H^3/(3c^2)).
    a = C * math.sinh(xi)
    c = C * math.cosh(xi)
    return math.pi * a * a * (2.0 * c / 3.0 + H - H ** 3 / (3.0 * c * c))


def cavity_volume(geom: EllipsoidParams) -> float:
    """Volume (ml) enclosed by the endocardial surface below z = H."""
    return _segment_volume(geom.C, geom.xi_endo, geom.H)


def wall_volume(geom: EllipsoidParams) -> float:
    """Volume (ml) between the epi- and endocardial surfaces below z = H."""
    return (_segment_volume(geom.C, geom.xi_epi, geom.H)
            - _segment_volume(geom.C, geom.xi_endo, geom.H))


def clinical_dimensions(geom: EllipsoidParams) -> ClinicalDimensions:
    """Derived clinical measures of a geometry.

    The diameter doubles the equatorial endocardial radius C*sinh(xi_endo);
    the basal diameter is the chord of the endo spheroid at the truncation
    plane.
    """
    c = geom.C * math.cosh(geom.xi_endo)
    if geom.H > c:
        raise DomainError("truncation height exceeds the endo polar radius")
    D = 2.0 * geom.C * math.sinh(geom.xi_endo)
    L = geom.H + c
    B = D * math.sin(math.acos(geom.H / c))
    return ClinicalDimensions(D_lv=D, L_lv=L, B_lv=B,
                              V=cavity_volume(geom), Vw=wall_volume(geom))


def check_physiological(dims: ClinicalDimensions, stage: str) -> dict[str, bool]:
    """Per-constraint pass flags for end-systole ("ES") or end-diastole ("ED")."""
    if stage == "ES":
        ranges = ES_RANGES
    elif stage == "ED":
        ranges = ED_RANGES
    else:
        raise ValueError(f"stage must be 'ES' or 'ED', got {stage!r}")
    return {name: lo <= getattr(dims, name) <= hi
            for name, (lo, hi) in ranges.items()}


def _solve_segment_xi(C: float, H: float, target: float, xi_lo: float,
                      what: str) -> float:
    """Find xi with segment_volume(C, xi, H) = target; volume is strictly
    increasing in xi on the valid domain."""
    # Below arccosh(H/C) the truncation plane misses the spheroid entirely.
    if H > C:
        xi_lo = max(xi_lo, math.acosh(H / C))
    lo = xi_lo + 1e-12
    if _segment_volume(C, lo, H) >= target:
        raise NoBracket(f"{what}: target volume {target:.6g} ml below the "
                        "minimum reachable at the lower bound")
    if _segment_volume(C, _XI_MAX, H) < target:
        raise NoBracket(f"{what}: target volume {target:.6g} ml not reachable "
                        f"below xi = {_XI_MAX}")
    return brentq(lambda xi: _segment_volume(C, xi, H) - target,
                  lo, _XI_MAX, xtol=1e-14, rtol=8.9e-16)


def solve_transmural(C: float, H: float, V_target: float,
                     Vw_target: float) -> tuple[float, float]:
    """Transmural coordinates reproducing the target cavity and wall volumes."""
    if min(C, H, V_target, Vw_target) <= 0:
        raise DomainError("solve_transmural requires positive inputs")
    xi_endo = _solve_segment_xi(C, H, V_target, 0.0, "cavity volume")
    xi_epi = _solve_segment_xi(C, H, V_target + Vw_target, xi_endo,
                               "wall volume")
    return xi_endo, xi_epi


def variation_geometry(var: ShapeVariation, V_fixed: float = 44.0,
                       Vw_fixed: float = 136.0) -> EllipsoidParams:
    """Scale the reference H and C, keeping cavity and wall volumes fixed.

    A geometry whose clinical dimensions leave the end-systolic ranges is
    still returned; the violation is reported as a warning.
    """
    C = var.C_tilde * C_REF
    H = var.H_tilde * H_REF
    xi_endo, xi_epi = solve_transmural(C, H, V_fixed, Vw_fixed)
    geom = EllipsoidParams(C=C, H=H, xi_endo=xi_endo, xi_epi=xi_epi)
    flags = check_physiological(clinical_dimensions(geom), "ES")
    failed = [name for name, ok in flags.items() if not ok]
    if failed:
        warnings.warn(f"variation geometry violates ES constraints: "
                      f"{', '.join(failed)}", stacklevel=2)
    return geom


@dataclass(frozen=True)
class SurfaceGrid:
    """Point lattices on the endo- and epicardial surfaces.

    ``endo`` and ``epi`` have shape (n_theta, n_phi, 3); theta runs from the
    basal plane to the apex, phi counterclockwise from the x-axis. The flat
    vector layout (endo block then epi block, row-major, xyz fastest) is the
    shared shape parametrization of the population model.
    """

    theta_endo: np.ndarray
    theta_epi: np.ndarray
    phi: np.ndarray
    endo: np.ndarray
    epi: np.ndarray

    @property
    def n_theta(self) -> int:
        return self.endo.shape[0]

    @property
    def n_phi(self) -> int:
        return self.endo.shape[1]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.endo.ravel(), self.epi.ravel()])


def surface_grid(geom: EllipsoidParams, n_theta: int = 16,
                 n_phi: int = 32) -> SurfaceGrid:
    """Deterministic (theta, phi) lattice on each surface of the geometry."""
    if n_theta < 2 or n_phi < 2:
        raise DomainError("lattice needs at least 2 points per direction")
    phi = np.linspace(0.0, 2.0 * math.pi, n_phi, endpoint=False)
    surfaces = []
    thetas = []
    for xi in (geom.xi_endo, geom.xi_epi):
        # theta_min is where the surface meets the truncation plane z = H.
        c = geom.C * math.cosh(xi)
        theta = np.linspace(math.acos(min(1.0, geom.H / c)), math.pi, n_theta)
        a = geom.C * math.sinh(xi)
        st, ct = np.sin(theta), np.cos(theta)
        pts = np.empty((n_theta, n_phi, 3))
        pts[:, :, 0] = a * np.outer(st, np.cos(phi))
        pts[:, :, 1] = a * np.outer(st, np.sin(phi))
        pts[:, :, 2] = (c * ct)[:, None]
        thetas.append(theta)
        surfaces.append(pts)
    return SurfaceGrid(theta_endo=thetas[0], theta_epi=thetas[1], phi=phi,
                       endo=surfaces[0], epi=surfaces[1])


def save_geometry(geom: EllipsoidParams, path) -> None:
    with open(path, "w") as fh:
        json.dump({"C_cm": geom.C, "H_cm": geom.H,
                   "xi_endo": geom.xi_endo, "xi_epi": geom.xi_epi}, fh,
                  indent=2)
        fh.write("\n")


def load_geometry(path) -> EllipsoidParams:
    with open(path) as fh:
        raw = json.load(fh)
    return EllipsoidParams(C=float(raw["C_cm"]), H=float(raw["H_cm"]),
                           xi_endo=float(raw["xi_endo"]),
                           xi_epi=float(raw["xi_epi"]))


def write_surface_csv(grid: SurfaceGrid, path) -> None:
    """Rows ``surface,theta,phi,x,y,z``, endo block first."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["surface", "theta", "phi", "x", "y", "z"])
        for name, theta, pts in (("endo", grid.theta_endo, grid.endo),
                                 ("epi", grid.theta_epi, grid.epi)):
            for i, th in enumerate(theta):
                for j, ph in enumerate(grid.phi):
                    x, y, z = pts[i, j]
                    writer.writerow([name, repr(float(th)), repr(float(ph)),
                                     repr(float(x)), repr(float(y)),
                                     repr(float(z))])
