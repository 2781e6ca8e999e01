"""Population-based shape modes for the idealized ventricle.

A synthetic population is drawn from log-normal distributions over the
end-diastolic dimension ranges, inverted to ellipsoid parameters, and
filtered to physiological shapes. Surface lattices of the accepted
geometries, stacked as deviations from the reference shape, yield dominant
deformation modes by singular-value decomposition. Training geometries are
the convex-hull vertices of the modal-coefficient cloud after low-likelihood
vertices are pruned.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.stats import multivariate_normal

from .errors import (
    DegenerateData,
    DegenerateHull,
    ExhaustedSampling,
    NoBracket,
    NoSolution,
)
from .geometry import (
    ED_RANGES,
    ClinicalDimensions,
    EllipsoidParams,
    SurfaceGrid,
    _solve_segment_xi,
    clinical_dimensions,
    reference_geometry,
    surface_grid,
)

# 97.5-percentile z-score; range endpoints are the 95% interval of each
# log-normal.
_Z95 = 1.959963984540054

SAMPLED_QUANTITIES = ("D_lv", "B_lv", "V", "Vw")


@dataclass(frozen=True)
class FilterConfig:
    """Extra physiological filters applied after the range checks."""

    min_wall_thickness: float = 0.5   # cm, at the equator
    max_slenderness: float = 2.5      # L_lv / D_lv
    min_xi_gap: float = 0.05          # xi_epi - xi_endo


@dataclass(frozen=True)
class GeometryCoefficients:
    """Modal coefficients; c = 0 is the reference geometry."""

    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        if not np.all(np.isfinite(self.c)):
            raise ValueError("coefficients must be finite")


@dataclass(frozen=True)
class PopulationSample:
    dims: ClinicalDimensions
    geom: EllipsoidParams
    shape: np.ndarray
    coeffs: GeometryCoefficients | None = None


@dataclass(frozen=True)
class ShapeBasis:
    """Truncated deformation basis around the reference shape.

    ``modes`` has orthonormal columns; ``energy_fractions`` is each retained
    mode's share of the total deformation energy.
    """

    x_ref: np.ndarray
    modes: np.ndarray
    singular_values: np.ndarray
    n_theta: int
    n_phi: int
    energy_fractions: np.ndarray | None = None

    @property
    def n_geom(self) -> int:
        return self.modes.shape[1]


def lognormal_params(lo: float, hi: float) -> tuple[float, float]:
    """(mu, sigma) of ln X for a log-normal with 2.5/97.5 percentiles (lo, hi)."""
    if not (0 < lo < hi):
        raise ValueError("need 0 < lo < hi")
    return (math.log(lo) + math.log(hi)) / 2.0, \
        (math.log(hi) - math.log(lo)) / (2.0 * _Z95)


def invert_dimensions(D: float, B: float, V: float, Vw: float) -> EllipsoidParams:
    """Ellipsoid parameters reproducing diameter, basal diameter, and volumes.

    The first three equations collapse to closed form: a = D/2 fixes the
    endocardial equatorial radius, B/D fixes H/c through the basal-chord
    relation, and the cavity volume then gives the polar radius c directly.
    The wall volume is inverted numerically for xi_epi.
    """
    if min(D, B, V, Vw) <= 0:
        raise NoSolution("dimensions must be positive")
    if B >= D:
        raise NoSolution("basal diameter must be below the LV diameter")
    a = D / 2.0
    k = math.sqrt(1.0 - (B / D) ** 2)  # = H / c
    c = V / (math.pi * a * a * (2.0 / 3.0 + k - k ** 3 / 3.0))
    if c <= a:
        raise NoSolution("cavity volume too small for the sampled diameter")
    C = math.sqrt(c * c - a * a)
    xi_endo = math.atanh(a / c)
    H = k * c
    try:
        xi_epi = _solve_segment_xi(C, H, V + Vw, xi_endo, "wall volume")
    except NoBracket as exc:
        raise NoSolution(str(exc)) from exc
    return EllipsoidParams(C=C, H=H, xi_endo=xi_endo, xi_epi=xi_epi)


def _passes_filters(geom: EllipsoidParams, dims: ClinicalDimensions,
                    filters: FilterConfig) -> bool:
    thickness = geom.C * (math.sinh(geom.xi_epi) - math.sinh(geom.xi_endo))
    return (thickness >= filters.min_wall_thickness
            and dims.L_lv / dims.D_lv <= filters.max_slenderness
            and geom.xi_epi - geom.xi_endo >= filters.min_xi_gap)


def sample_population(n_pop: int, seed: int, ranges=None,
                      filters: FilterConfig = FilterConfig(),
                      n_theta: int = 16, n_phi: int = 32,
                      ) -> list[PopulationSample]:
    """Accepted physiological samples, deterministic in the seed.

    Draws (D, B, V, Vw) from independent log-normals matched to the given
    95% ranges, inverts each to a geometry, and keeps draws whose dimensions
    fall inside the ranges and whose shape passes the filters.
    """
    if n_pop < 1:
        raise ValueError("n_pop must be at least 1")
    ranges = dict(ED_RANGES if ranges is None else ranges)
    mus, sigmas = zip(*(lognormal_params(*ranges[q]) for q in SAMPLED_QUANTITIES))
    rng = np.random.default_rng(seed)
    accepted: list[PopulationSample] = []
    draws = 0
    budget = max(20_000, 400 * n_pop)
    while len(accepted) < n_pop:
        if draws >= budget and len(accepted) < 0.01 * draws:
            raise ExhaustedSampling(
                f"{len(accepted)}/{draws} draws accepted; the ranges and "
                "filters admit too few shapes")
        batch = rng.lognormal(mean=mus, sigma=sigmas, size=(256, 4))
        for D, B, V, Vw in batch:
            draws += 1
            if len(accepted) == n_pop:
                break
            if not all(ranges[q][0] <= x <= ranges[q][1]
                       for q, x in zip(SAMPLED_QUANTITIES, (D, B, V, Vw))):
                continue
            try:
                geom = invert_dimensions(D, B, V, Vw)
            except NoSolution:
                continue
            dims = clinical_dimensions(geom)
            if not _passes_filters(geom, dims, filters):
                continue
            shape = surface_grid(geom, n_theta, n_phi).as_vector()
            accepted.append(PopulationSample(dims=dims, geom=geom, shape=shape))
    return accepted


def _shape_matrix(population) -> np.ndarray:
    rows = [s.shape if isinstance(s, PopulationSample) else np.asarray(s, float)
            for s in population]
    return np.column_stack(rows)


def build_basis(population, n_geom: int, n_theta: int = 16,
                n_phi: int = 32) -> ShapeBasis:
    """Truncated SVD basis of the population's deviations from the reference."""
    X = _shape_matrix(population)
    if X.shape[1] < n_geom:
        raise DegenerateData(f"population of {X.shape[1]} cannot support "
                             f"{n_geom} modes")
    x_ref = surface_grid(reference_geometry(), n_theta, n_phi).as_vector()
    if x_ref.size != X.shape[0]:
        raise ValueError("population lattice does not match (n_theta, n_phi)")
    dX = X - x_ref[:, None]
    U, S, _ = np.linalg.svd(dX, full_matrices=False)
    if np.sum(S > S[0] * 1e-12) < n_geom:
        raise DegenerateData(f"deformation rank below n_geom = {n_geom}")
    total = float(np.sum(S ** 2))
    return ShapeBasis(x_ref=x_ref, modes=U[:, :n_geom],
                      singular_values=S[:n_geom], n_theta=n_theta,
                      n_phi=n_phi, energy_fractions=S[:n_geom] ** 2 / total)


def reconstruct(basis: ShapeBasis, c) -> np.ndarray:
    """Shape vector X_ref + modes @ c."""
    vec = c.c if isinstance(c, GeometryCoefficients) else np.asarray(c, float)
    if vec.shape != (basis.n_geom,):
        raise ValueError(f"expected {basis.n_geom} coefficients")
    return basis.x_ref + basis.modes @ vec


def fit_coefficients(basis: ShapeBasis, target) -> GeometryCoefficients:
    """Least-squares modal coefficients of a target shape.

    Orthonormal modes make the normal equations explicit:
    c = modes^T (X - X_ref).
    """
    if isinstance(target, SurfaceGrid):
        target = target.as_vector()
    x = np.asarray(target, dtype=float)
    if x.shape != basis.x_ref.shape:
        raise ValueError("target does not use the basis lattice")
    return GeometryCoefficients(c=basis.modes.T @ (x - basis.x_ref))


def attach_coefficients(population, basis: ShapeBasis) -> list[PopulationSample]:
    return [dataclasses.replace(s, coeffs=fit_coefficients(basis, s.shape))
            for s in population]


def coefficient_matrix(population) -> np.ndarray:
    """(n_pop, n_geom) array from fitted samples or raw coefficient rows."""
    rows = []
    for s in population:
        if isinstance(s, PopulationSample):
            if s.coeffs is None:
                raise ValueError("sample has no fitted coefficients")
            rows.append(s.coeffs.c)
        elif isinstance(s, GeometryCoefficients):
            rows.append(s.c)
        else:
            rows.append(np.asarray(s, dtype=float))
    return np.vstack(rows)


def _points_inside_hull(hull: ConvexHull, points: np.ndarray,
                        slack: float = 1e-9) -> np.ndarray:
    # hull.equations rows [n, b] describe facets n.x + b <= 0 inside.
    vals = points @ hull.equations[:, :-1].T + hull.equations[:, -1]
    return np.all(vals <= slack, axis=1)


def select_training_hull(coefficients, target_fraction: float = 0.90
                         ) -> np.ndarray:
    """Indices of the pruned convex-hull vertices of the coefficient cloud.

    The hull vertex least likely under a Gaussian fit of the full cloud is
    removed and the hull recomputed, until the fraction of the population
    inside or on the hull first drops to the target. Indices refer to the
    original population ordering.
    """
    pts = coefficient_matrix(coefficients)
    n, d = pts.shape
    if n <= 2 * d:
        raise DegenerateData(f"need more than {2 * d} points in {d}D")
    # allow_singular: a flat cloud must fail in the hull (DegenerateHull),
    # not in the likelihood fit
    gauss = multivariate_normal(mean=pts.mean(axis=0),
                                cov=np.cov(pts.T) + 1e-12 * np.eye(d),
                                allow_singular=True)
    logpdf = gauss.logpdf(pts)
    active = np.arange(n)
    while True:
        try:
            hull = ConvexHull(pts[active])
        except QhullError as exc:
            raise DegenerateHull("coefficient cloud is degenerate") from exc
        vertices = active[hull.vertices]
        fraction = float(np.mean(_points_inside_hull(hull, pts)))
        if fraction <= target_fraction:
            return np.sort(vertices)
        drop = vertices[np.argmin(logpdf[vertices])]
        active = active[active != drop]


def hull_fraction(coefficients, vertex_indices) -> float:
    """Fraction of the population inside or on the hull of the given vertices."""
    pts = coefficient_matrix(coefficients)
    hull = ConvexHull(pts[np.asarray(vertex_indices, dtype=int)])
    return float(np.mean(_points_inside_hull(hull, pts)))


def save_basis(basis: ShapeBasis, path) -> None:
    with open(path, "w") as fh:
        json.dump({
            "x_ref": basis.x_ref.tolist(),
            "modes": basis.modes.tolist(),
            "singular_values": basis.singular_values.tolist(),
            "lattice": {"n_theta": basis.n_theta, "n_phi": basis.n_phi},
        }, fh)
        fh.write("\n")


def load_basis(path) -> ShapeBasis:
    with open(path) as fh:
        raw = json.load(fh)
    return ShapeBasis(x_ref=np.array(raw["x_ref"], dtype=float),
                      modes=np.array(raw["modes"], dtype=float),
                      singular_values=np.array(raw["singular_values"],
                                               dtype=float),
                      n_theta=int(raw["lattice"]["n_theta"]),
                      n_phi=int(raw["lattice"]["n_phi"]))


def save_coefficients(coeffs: GeometryCoefficients, path) -> None:
    with open(path, "w") as fh:
        json.dump({"c": coeffs.c.tolist()}, fh)
        fh.write("\n")


def load_coefficients(path) -> GeometryCoefficients:
    with open(path) as fh:
        return GeometryCoefficients(c=np.array(json.load(fh)["c"], dtype=float))


_MANIFEST_FIELDS = ("index", "D_lv", "L_lv", "B_lv", "V", "Vw",
                    "C", "H", "xi_endo", "xi_epi")


def write_population_csv(population, path) -> None:
    """Manifest of dimensions and geometry parameters, one row per sample.

    Coefficient columns c1..cK are appended when every sample carries fitted
    coefficients; shapes are recoverable from the geometry columns.
    """
    with_coeffs = all(s.coeffs is not None for s in population)
    k = population[0].coeffs.c.size if with_coeffs and population else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(_MANIFEST_FIELDS)
                        + [f"c{i + 1}" for i in range(k)])
        for i, s in enumerate(population):
            row = [i, s.dims.D_lv, s.dims.L_lv, s.dims.B_lv, s.dims.V,
                   s.dims.Vw, s.geom.C, s.geom.H, s.geom.xi_endo,
                   s.geom.xi_epi]
            if with_coeffs:
                row += list(s.coeffs.c)
            writer.writerow([x if isinstance(x, int) else repr(float(x))
                             for x in row])


def read_population_csv(path, n_theta: int = 16, n_phi: int = 32
                        ) -> list[PopulationSample]:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            geom = EllipsoidParams(C=float(row["C"]), H=float(row["H"]),
                                   xi_endo=float(row["xi_endo"]),
                                   xi_epi=float(row["xi_epi"]))
            coeff_keys = sorted((k for k in row if k.startswith("c")
                                 and k[1:].isdigit()),
                                key=lambda k: int(k[1:]))
            coeffs = GeometryCoefficients(
                c=np.array([float(row[k]) for k in coeff_keys])) \
                if coeff_keys else None
            samples.append(PopulationSample(
                dims=clinical_dimensions(geom), geom=geom,
                shape=surface_grid(geom, n_theta, n_phi).as_vector(),
                coeffs=coeffs))
    return samples
