"""Synthetic stand-in for the full-order model.

A prescribed smooth field maps geometry coefficients to the four correction
factors; "measured" traces are the reduced model simulated at those factors
plus one correlated-noise draw. The same module ingests externally produced
pressure-volume CSV files onto the configured time grid, so file-backed and
synthetic records are interchangeable downstream.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .calibration import NoiseCovariance, NoiseModel
from .errors import GridError, ParseError, ValidationError
from .onefiber.parameters import CorrectionFactors, ROMParameters
from .onefiber.simulate import PVTrace, run_simulation
from .podgeom import GeometryCoefficients

FOM_CSV_HEADER = ("t_ms", "p_mmHg", "V_ml")
PROVENANCES = ("synthetic", "file")

FIELD_LOWER = 0.5
FIELD_UPPER = 1.5
BETA_FLOOR = 0.2


def _coeff_array(c) -> np.ndarray:
    if isinstance(c, GeometryCoefficients):
        return c.c
    return np.asarray(c, dtype=float)


@dataclass(frozen=True)
class GroundTruthField:
    """Per-factor map theta_k(c) = offset_k + slope_k . c + amp_k tanh(dir_k . c).

    Rows are ordered (alpha, beta, gamma, lambda). The tanh term keeps the
    perturbation bounded; trend guarantees along a coordinate hold when the
    corresponding ``direction`` entries are zero there, leaving the affine
    slope as the exact derivative.
    """

    offset: np.ndarray     # (4,)
    slope: np.ndarray      # (4, d)
    amp: np.ndarray        # (4,)
    direction: np.ndarray  # (4, d)

    def __post_init__(self):
        offset = np.asarray(self.offset, dtype=float)
        slope = np.atleast_2d(np.asarray(self.slope, dtype=float))
        amp = np.asarray(self.amp, dtype=float)
        direction = np.atleast_2d(np.asarray(self.direction, dtype=float))
        if offset.shape != (4,) or amp.shape != (4,):
            raise ValidationError("field needs four offsets and amplitudes")
        if slope.shape != direction.shape or slope.shape[0] != 4:
            raise ValidationError("slope and direction must both be (4, d)")
        for arr in (offset, slope, amp, direction):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("field coefficients must be finite")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "slope", slope)
        object.__setattr__(self, "amp", amp)
        object.__setattr__(self, "direction", direction)

    @property
    def dim(self) -> int:
        return self.slope.shape[1]

    def evaluate_array(self, c) -> np.ndarray:
        c = _coeff_array(c)
        return (self.offset + self.slope @ c
                + self.amp * np.tanh(self.direction @ c))

    def evaluate(self, c) -> CorrectionFactors:
        return CorrectionFactors.from_array(self.evaluate_array(c))

    def evaluate_many(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        return (self.offset[None, :] + coeffs @ self.slope.T
                + self.amp[None, :] * np.tanh(coeffs @ self.direction.T))


def validate_field(field: GroundTruthField, coefficients: np.ndarray) -> None:
    """Check the range invariants over a coefficient cloud (e.g. the
    population used for training)."""
    values = field.evaluate_many(coefficients)
    if values.min() < FIELD_LOWER or values.max() > FIELD_UPPER:
        raise ValidationError(
            f"field leaves [{FIELD_LOWER}, {FIELD_UPPER}] over the cloud: "
            f"range [{values.min():.3f}, {values.max():.3f}]")
    if values[:, 1].min() < BETA_FLOOR:
        raise ValidationError("beta field dips below its floor")


def field_from_cloud(coefficients: np.ndarray, strength: float = 0.15,
                     wiggle: float = 0.05) -> GroundTruthField:
    """Default ground-truth field scaled to a coefficient cloud.

    Alpha, gamma, and lambda rise along the first coefficient while beta
    falls; a tanh ripple along the later coordinates makes the field
    non-affine. strength + wiggle must stay below 0.5 so the range invariant
    holds over the cloud.
    """
    coeffs = np.atleast_2d(np.asarray(coefficients, dtype=float))
    d = coeffs.shape[1]
    scale = np.abs(coeffs).max(axis=0)
    scale[scale == 0.0] = 1.0

    slope = np.zeros((4, d))
    slope[:, 0] = np.array([1.0, -1.0, 0.6, 0.4]) * strength / scale[0]
    amp = np.array([1.0, -1.0, 1.0, -1.0]) * wiggle
    direction = np.zeros((4, d))
    if d > 1:
        for k in range(4):
            j = 1 + k % (d - 1)  # never the first coordinate
            direction[k, j] = 1.0 / scale[j]
    else:
        amp = np.zeros(4)
    field = GroundTruthField(offset=np.ones(4), slope=slope, amp=amp,
                             direction=direction)
    validate_field(field, coeffs)
    return field


def save_field(field: GroundTruthField, path) -> None:
    payload = {
        "schema": 1,
        "offset": field.offset.tolist(),
        "slope": field.slope.tolist(),
        "amp": field.amp.tolist(),
        "direction": field.direction.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_field(path) -> GroundTruthField:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != 1:
        raise ValidationError(f"unsupported field schema in {path}")
    return GroundTruthField(offset=payload["offset"], slope=payload["slope"],
                            amp=payload["amp"],
                            direction=payload["direction"])


def synth_fom_trace(c, field: GroundTruthField, rom_params: ROMParameters,
                    noise: NoiseModel | None, seed: int = 0,
                    n_cycles: int = 6, dt: float = 2.0) -> PVTrace:
    """Steady-state cycle at theta*(c) plus one correlated noise draw.

    ``noise=None`` returns the clean trace. Otherwise the grid comes from
    the noise model and the draw is ``NoiseCovariance(noise).sample`` with a
    generator seeded by ``seed``, so traces are reproducible per seed.
    """
    factors = field.evaluate(c)
    if noise is not None:
        dt = noise.dt
    clean = run_simulation(rom_params, factors, n_cycles=n_cycles,
                           dt=dt).trace(-1)
    if noise is None:
        return clean
    if noise.n != clean.n:
        raise ValidationError(f"noise grid has {noise.n} steps, "
                              f"cycle has {clean.n}")
    nu_p, nu_V = NoiseCovariance(noise).sample(np.random.default_rng(seed))
    return PVTrace(dt=clean.dt, p=clean.p + nu_p, V=clean.V + nu_V,
                   cycle_index=clean.cycle_index)


@dataclass(frozen=True)
class FomRecord:
    coeffs: GeometryCoefficients
    trace: PVTrace
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"provenance must be one of {PROVENANCES}")


@dataclass(frozen=True)
class FomDataset:
    """Records sharing one time grid, ready for per-geometry calibration."""

    records: tuple[FomRecord, ...]

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if not records:
            raise ValidationError("dataset needs at least one record")
        first = records[0].trace
        for rec in records[1:]:
            if rec.trace.n != first.n or rec.trace.dt != first.dt:
                raise ValidationError("dataset traces must share dt and n")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dt(self) -> float:
        return self.records[0].trace.dt

    @property
    def n_steps(self) -> int:
        return self.records[0].trace.n


def build_synthetic_dataset(coeff_list, field: GroundTruthField,
                            rom_params: ROMParameters,
                            noise: NoiseModel | None, seed: int = 0,
                            n_cycles: int = 6, dt: float = 2.0) -> FomDataset:
    """One synthetic record per coefficient vector; record i uses seed + i."""
    records = []
    for i, c in enumerate(coeff_list):
        coeffs = c if isinstance(c, GeometryCoefficients) \
            else GeometryCoefficients(c=np.asarray(c, dtype=float))
        trace = synth_fom_trace(coeffs, field, rom_params, noise,
                                seed=seed + i, n_cycles=n_cycles, dt=dt)
        records.append(FomRecord(coeffs=coeffs, trace=trace,
                                 provenance="synthetic"))
    return FomDataset(records=tuple(records))


@dataclass(frozen=True)
class GridSpec:
    """Target uniform cycle grid for ingested traces."""

    dt: float
    n: int

    def __post_init__(self):
        if self.dt <= 0 or self.n < 4:
            raise ValidationError("grid needs dt > 0 and at least 4 samples")

    @property
    def period(self) -> float:
        return self.dt * self.n


def write_fom_csv(trace: PVTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FOM_CSV_HEADER)
        for t, p, v in zip(trace.t, trace.p, trace.V):
            writer.writerow([repr(float(t)), repr(float(p)), repr(float(v))])


def ingest_fom_csv(path, grid_spec: GridSpec) -> PVTrace:
    """Parse, validate, and resample one measured cycle onto the grid.

    Timestamps must be strictly increasing; the file's cycle length
    (last-minus-first time plus one median step) must match the configured
    period within 1%.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != FOM_CSV_HEADER:
        raise ParseError(f"{path}: expected header {','.join(FOM_CSV_HEADER)}")
    body = [r for r in rows[1:] if r]
    if len(body) < 4:
        raise ParseError(f"{path}: need at least 4 samples")
    try:
        data = np.array([[float(x) for x in row] for row in body])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: non-numeric or ragged row: {exc}") from exc
    if data.shape[1] != 3:
        raise ParseError(f"{path}: expected 3 columns")
    t, p, v = data.T
    steps = np.diff(t)
    if np.any(steps <= 0):
        raise ParseError(f"{path}: timestamps must be strictly increasing")
    period_file = (t[-1] - t[0]) + float(np.median(steps))
    if abs(period_file - grid_spec.period) > 0.01 * grid_spec.period:
        raise GridError(f"{path}: cycle length {period_file:.6g} ms vs "
                        f"configured {grid_spec.period:.6g} ms")
    # periodic linear interpolation, file row 0 defining t = 0
    t_rel = np.concatenate([t - t[0], [period_file]])
    p_w = np.concatenate([p, [p[0]]])
    v_w = np.concatenate([v, [v[0]]])
    t_new = (np.arange(grid_spec.n) * grid_spec.dt) % period_file
    return PVTrace(dt=grid_spec.dt, p=np.interp(t_new, t_rel, p_w),
                   V=np.interp(t_new, t_rel, v_w))


def save_fom_dataset(dataset: FomDataset, directory) -> None:
    """Manifest plus one trace CSV per record."""
    os.makedirs(directory, exist_ok=True)
    manifest = {"schema": 1, "dt": dataset.dt, "n": dataset.n_steps,
                "records": []}
    for i, rec in enumerate(dataset.records):
        name = f"fom_{i:03d}.csv"
        write_fom_csv(rec.trace, os.path.join(directory, name))
        manifest["records"].append({"c": rec.coeffs.c.tolist(),
                                    "provenance": rec.provenance,
                                    "trace": name})
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_fom_dataset(directory) -> FomDataset:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != 1:
        raise ValidationError(f"unsupported dataset schema in {directory}")
    grid = GridSpec(dt=manifest["dt"], n=manifest["n"])
    records = []
    for entry in manifest["records"]:
        trace = ingest_fom_csv(os.path.join(directory, entry["trace"]), grid)
        records.append(FomRecord(
            coeffs=GeometryCoefficients(c=np.asarray(entry["c"], dtype=float)),
            trace=trace, provenance=entry["provenance"]))
    return FomDataset(records=tuple(records))
