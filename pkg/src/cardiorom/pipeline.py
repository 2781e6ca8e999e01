"""Offline/online orchestration over a directory-backed artifact store.

The offline stage turns a seed and a config into persisted artifacts:
population manifest, shape basis, training hull, ground-truth field,
synthetic dataset, per-vertex calibration records, and the trained factor
surrogate. The online stage maps a target geometry to correction-factor
moments, propagates them through the reduced model by Monte-Carlo, and
reports credible bands with a trust check. Everything is deterministic
given the config (seed included), so reruns are byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .calibration import (ChainConfig, NoiseSpec, Prior, ROMContext,
                          build_noise_model, calibrate, rom_trace)
from .errors import NumericalError, SimulationFailed, ValidationError
from .geometry import SurfaceGrid
from .gp import (MIN_DISTANCE, TrainingRecord, add_observation, load_vector_gp,
                 predict_factors, save_vector_gp, train_vector_gp)
from .onefiber.parameters import (FACTOR_NAMES, CorrectionFactors,
                                  ROMParameters, default_parameters)
from .onefiber.simulate import summarize
from .oracle import (build_synthetic_dataset, field_from_cloud,
                     load_fom_dataset, save_field, save_fom_dataset)
from .podgeom import (GeometryCoefficients, attach_coefficients, build_basis,
                      coefficient_matrix, fit_coefficients, hull_fraction,
                      load_basis, read_population_csv, sample_population,
                      save_basis, select_training_hull, write_population_csv)

CONFIG_SCHEMA = 1
REPORT_SCHEMA = 1

# deterministic per-stage seed offsets from the master seed
SEED_DATA = 1
SEED_GP = 2
SEED_UQ = 3
SEED_CHAIN_BASE = 1000

Z_99 = 2.5758293035489004  # two-sided 99% normal quantile


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class UQConfig:
    """Forward Monte-Carlo settings for the online stage."""

    n_mc: int = 2000
    levels: tuple[float, ...] = (0.95, 0.99)

    def __post_init__(self):
        if self.n_mc < 100:
            raise ValidationError("n_mc must be at least 100")
        levels = tuple(float(l) for l in self.levels)
        if not levels or any(not 0.0 < l < 1.0 for l in levels):
            raise ValidationError("credible levels must lie in (0, 1)")
        object.__setattr__(self, "levels", levels)


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: str
    seed: int = 0
    n_pop: int = 60
    n_geom: int = 4
    n_theta: int = 16
    n_phi: int = 32
    hull_fraction: float = 0.90
    rom_dt: float = 2.0
    rom_n_cycles: int = 6
    field_strength: float = 0.15
    field_wiggle: float = 0.05
    data_noise: bool = True  # False keeps synthetic traces clean
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    prior: Prior = field(default_factory=Prior)
    chain: ChainConfig = field(default_factory=ChainConfig)
    uq: UQConfig = field(default_factory=UQConfig)
    trust_threshold: float = 0.1
    gp_min_distance: float = MIN_DISTANCE
    gp_reoptimize: bool = True
    params_path: str | None = None

    def __post_init__(self):
        if not self.out_dir:
            raise ValidationError("out_dir is required")
        if self.n_pop < 1 or self.n_geom < 1:
            raise ValidationError("n_pop and n_geom must be positive")
        if self.params_path is not None and not os.path.exists(self.params_path):
            raise ValidationError(f"params file not found: {self.params_path}")

    def rom_params(self) -> ROMParameters:
        if self.params_path is None:
            return default_parameters()
        with open(self.params_path) as fh:
            return ROMParameters.from_dict(json.load(fh))


def config_to_dict(config: PipelineConfig) -> dict:
    return {
        "schema": CONFIG_SCHEMA,
        "out_dir": config.out_dir,
        "seed": config.seed,
        "population": {"n_pop": config.n_pop, "n_theta": config.n_theta,
                       "n_phi": config.n_phi},
        "basis": {"n_geom": config.n_geom},
        "hull": {"target_fraction": config.hull_fraction},
        "rom": {"dt": config.rom_dt, "n_cycles": config.rom_n_cycles,
                "params": config.params_path},
        "field": {"strength": config.field_strength,
                  "wiggle": config.field_wiggle},
        "data_noise": config.data_noise,
        "noise": dataclasses.asdict(config.noise),
        "prior": {"mu": config.prior.mu.tolist(),
                  "sigma": config.prior.sigma.tolist()},
        "chain": dataclasses.asdict(config.chain),
        "gp": {"min_distance": config.gp_min_distance,
               "re_optimize": config.gp_reoptimize},
        "uq": {"n_mc": config.uq.n_mc, "levels": list(config.uq.levels)},
        "trust_threshold": config.trust_threshold,
    }


def config_from_dict(raw: dict, out_dir=None, seed=None) -> PipelineConfig:
    if raw.get("schema") != CONFIG_SCHEMA:
        raise ValidationError("unsupported config schema")
    pop = raw.get("population", {})
    rom = raw.get("rom", {})
    fld = raw.get("field", {})
    gp = raw.get("gp", {})
    uq = raw.get("uq", {})
    prior = raw.get("prior", {})
    return PipelineConfig(
        out_dir=out_dir if out_dir is not None else raw.get("out_dir", ""),
        seed=seed if seed is not None else raw.get("seed", 0),
        n_pop=pop.get("n_pop", 60),
        n_theta=pop.get("n_theta", 16),
        n_phi=pop.get("n_phi", 32),
        n_geom=raw.get("basis", {}).get("n_geom", 4),
        hull_fraction=raw.get("hull", {}).get("target_fraction", 0.90),
        rom_dt=rom.get("dt", 2.0),
        rom_n_cycles=rom.get("n_cycles", 6),
        params_path=rom.get("params"),
        field_strength=fld.get("strength", 0.15),
        field_wiggle=fld.get("wiggle", 0.05),
        data_noise=raw.get("data_noise", True),
        noise=NoiseSpec(**raw.get("noise", {})),
        prior=Prior(mu=np.asarray(prior.get("mu", np.ones(4)), dtype=float),
                    sigma=np.asarray(prior.get("sigma", np.full(4, 0.1)),
                                     dtype=float)),
        chain=ChainConfig(**raw.get("chain", {})),
        uq=UQConfig(n_mc=uq.get("n_mc", 2000),
                    levels=tuple(uq.get("levels", (0.95, 0.99)))),
        trust_threshold=raw.get("trust_threshold", 0.1),
        gp_min_distance=gp.get("min_distance", MIN_DISTANCE),
        gp_reoptimize=gp.get("re_optimize", True),
    )


def load_config(path, out_dir=None, seed=None) -> PipelineConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh), out_dir=out_dir, seed=seed)


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(config: PipelineConfig) -> str:
    """Hash of everything that affects the numbers; the output directory
    only says where they land, so it is excluded."""
    payload = config_to_dict(config)
    payload.pop("out_dir")
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


class ArtifactStore:
    """Plain directory with a JSON manifest of content hashes."""

    def __init__(self, directory):
        self.dir = str(directory)
        os.makedirs(self.dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    # named artifacts
    @property
    def population_csv(self): return self.path("population.csv")
    @property
    def basis_json(self): return self.path("basis.json")
    @property
    def hull_json(self): return self.path("hull.json")
    @property
    def field_json(self): return self.path("field.json")
    @property
    def dataset_dir(self): return self.path("dataset")
    @property
    def records_json(self): return self.path("calibration_records.json")
    @property
    def gp_json(self): return self.path("gp_state.json")
    @property
    def manifest_json(self): return self.path("manifest.json")

    def require(self, path: str, producer: str) -> str:
        """Missing prerequisites are a config problem, not an IO crash."""
        if not os.path.exists(path):
            raise ValidationError(
                f"missing artifact {os.path.basename(path)}; "
                f"run the {producer} stage first")
        return path

    def read_manifest(self) -> dict:
        if not os.path.exists(self.manifest_json):
            return {"schema": 1, "artifacts": {}, "counts": {}}
        with open(self.manifest_json) as fh:
            return json.load(fh)

    def record_artifacts(self, config: PipelineConfig, names: dict,
                         counts: dict | None = None) -> None:
        """Merge artifact hashes (name -> file path) into the manifest."""
        manifest = self.read_manifest()
        manifest["config_sha256"] = config_hash(config)
        for name, path in names.items():
            rel = os.path.relpath(path, self.dir)
            manifest["artifacts"][name] = {"file": rel,
                                           "sha256": sha256_file(path)}
        if counts:
            manifest["counts"].update(counts)
        with open(self.manifest_json, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


@contextmanager
def _stage(store: ArtifactStore, name: str):
    """Tag any stage failure in an on-disk report, then re-raise."""
    try:
        yield
    except Exception as exc:
        report = {"stage": name, "error": type(exc).__name__,
                  "message": str(exc)}
        with open(store.path("error_report.json"), "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        raise


def stage_population(config: PipelineConfig) -> list:
    store = ArtifactStore(config.out_dir)
    with _stage(store, "population"):
        population = sample_population(config.n_pop, config.seed,
                                       n_theta=config.n_theta,
                                       n_phi=config.n_phi)
        write_population_csv(population, store.population_csv)
        store.record_artifacts(config, {"population": store.population_csv},
                               {"n_pop": len(population)})
    return population


def stage_basis(config: PipelineConfig):
    store = ArtifactStore(config.out_dir)
    with _stage(store, "basis"):
        population = read_population_csv(
            store.require(store.population_csv, "population"),
                                         config.n_theta, config.n_phi)
        basis = build_basis(population, config.n_geom, config.n_theta,
                            config.n_phi)
        population = attach_coefficients(population, basis)
        save_basis(basis, store.basis_json)
        write_population_csv(population, store.population_csv)
        store.record_artifacts(config, {"basis": store.basis_json,
                                        "population": store.population_csv})
    return basis, population


def stage_hull(config: PipelineConfig) -> np.ndarray:
    store = ArtifactStore(config.out_dir)
    with _stage(store, "hull"):
        population = read_population_csv(
            store.require(store.population_csv, "basis"),
            config.n_theta, config.n_phi)
        coeffs = coefficient_matrix(population)
        vertices = select_training_hull(coeffs, config.hull_fraction)
        payload = {"schema": 1,
                   "vertex_indices": [int(i) for i in vertices],
                   "fraction": hull_fraction(coeffs, vertices),
                   "n_vertices": int(len(vertices))}
        with open(store.hull_json, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        store.record_artifacts(config, {"hull": store.hull_json},
                               {"n_vertices": len(vertices)})
    return vertices


def _load_hull(store: ArtifactStore) -> list[int]:
    with open(store.require(store.hull_json, "hull")) as fh:
        return json.load(fh)["vertex_indices"]


def stage_oracle(config: PipelineConfig):
    """Ground-truth field scaled to the population, plus synthetic traces
    at the hull vertices."""
    store = ArtifactStore(config.out_dir)
    with _stage(store, "oracle"):
        population = read_population_csv(
            store.require(store.population_csv, "basis"),
            config.n_theta, config.n_phi)
        coeffs = coefficient_matrix(population)
        vertices = _load_hull(store)
        field_fn = field_from_cloud(coeffs, config.field_strength,
                                    config.field_wiggle)
        save_field(field_fn, store.field_json)
        params = config.rom_params()
        ctx = ROMContext(params=params, n_cycles=config.rom_n_cycles,
                         dt=config.rom_dt)
        noise = None
        if config.data_noise:
            reference = CorrectionFactors.from_array(config.prior.mu)
            noise = build_noise_model(rom_trace(ctx, reference), ctx,
                                      config.noise, reference)
        dataset = build_synthetic_dataset(
            coeffs[vertices], field_fn, params, noise,
            seed=config.seed + SEED_DATA, n_cycles=config.rom_n_cycles,
            dt=config.rom_dt)
        save_fom_dataset(dataset, store.dataset_dir)
        store.record_artifacts(
            config,
            {"field": store.field_json,
             "dataset": os.path.join(store.dataset_dir, "manifest.json")},
            {"n_records": len(dataset)})
    return field_fn, dataset


def stage_calibrate(config: PipelineConfig) -> list[TrainingRecord]:
    """One posterior per dataset record; vertex i uses seed + 1000 + i."""
    store = ArtifactStore(config.out_dir)
    with _stage(store, "calibrate"):
        store.require(os.path.join(store.dataset_dir, "manifest.json"),
                      "oracle")
        dataset = load_fom_dataset(store.dataset_dir)
        params = config.rom_params()
        records = []
        out = []
        for i, rec in enumerate(dataset.records):
            chain = dataclasses.replace(
                config.chain, seed=config.seed + SEED_CHAIN_BASE + i)
            summary = calibrate(rec.trace, params, config.noise,
                                config.prior, chain,
                                n_cycles=config.rom_n_cycles)
            records.append(TrainingRecord(c=rec.coeffs.c, mu=summary.mu,
                                          sigma_mat=summary.sigma_mat))
            out.append({"index": i, "c": rec.coeffs.c.tolist(),
                        "mu": summary.mu.tolist(),
                        "sigma_mat": summary.sigma_mat.tolist(),
                        "acceptance": summary.acceptance_rate,
                        "seed": chain.seed})
        with open(store.records_json, "w") as fh:
            json.dump({"schema": 1, "records": out}, fh, indent=2)
            fh.write("\n")
        store.record_artifacts(config, {"calibration": store.records_json},
                               {"n_calibrated": len(records)})
    return records


def load_training_records(path) -> list[TrainingRecord]:
    with open(path) as fh:
        payload = json.load(fh)
    return [TrainingRecord(c=np.asarray(r["c"], dtype=float),
                           mu=np.asarray(r["mu"], dtype=float),
                           sigma_mat=np.asarray(r["sigma_mat"], dtype=float))
            for r in payload["records"]]


def stage_gp_train(config: PipelineConfig):
    store = ArtifactStore(config.out_dir)
    with _stage(store, "gp-train"):
        records = load_training_records(
            store.require(store.records_json, "calibrate"))
        vgp = train_vector_gp(records, re_optimize=config.gp_reoptimize,
                              seed=config.seed + SEED_GP)
        save_vector_gp(vgp, store.gp_json,
                       config={"min_distance": config.gp_min_distance,
                               "re_optimize": config.gp_reoptimize})
        store.record_artifacts(config, {"gp_state": store.gp_json},
                               {"gp_training_size": len(records)})
    return vgp


def run_offline(config: PipelineConfig) -> dict:
    """All offline stages in order; returns the final manifest."""
    stage_population(config)
    stage_basis(config)
    stage_hull(config)
    stage_oracle(config)
    stage_calibrate(config)
    stage_gp_train(config)
    store = ArtifactStore(config.out_dir)
    manifest = store.read_manifest()
    counts = manifest["counts"]
    if counts["gp_training_size"] != counts["n_vertices"]:
        raise ValidationError("GP training size does not match the hull")
    return manifest


@dataclass(frozen=True)
class CredibleBand:
    """Pointwise band at one credible level."""

    level: float
    p_lo: np.ndarray
    p_hi: np.ndarray
    V_lo: np.ndarray
    V_hi: np.ndarray

    def __post_init__(self):
        for name in ("p_lo", "p_hi", "V_lo", "V_hi"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class TrustCheck:
    """Width of the V_ED band against the 99% noise half-width."""

    band_halfwidth_VED: float
    noise_level: float
    ratio: float
    flag: bool
    threshold: float

    def __post_init__(self):
        if self.ratio < 0:
            raise ValidationError("trust ratio must be nonnegative")


@dataclass(frozen=True)
class PredictionReport:
    c_hat: np.ndarray
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    dt: float
    p_median: np.ndarray
    V_median: np.ndarray
    bands: tuple[CredibleBand, ...]
    summary_quantiles: dict
    trust: TrustCheck
    n_mc: int
    n_failed: int
    gp_sha256: str
    config_sha256: str
    seed: int

    def __post_init__(self):
        for name in ("c_hat", "mu_hat", "sigma_hat", "p_median", "V_median"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        for band in self.bands:
            if (np.any(band.p_lo > self.p_median)
                    or np.any(self.p_median > band.p_hi)
                    or np.any(band.V_lo > self.V_median)
                    or np.any(self.V_median > band.V_hi)):
                raise ValidationError("band must bracket the median pointwise")


def _summary_arrays(traces) -> dict[str, np.ndarray]:
    names = ("V_ED", "V_ES", "p_max", "EF", "V_stroke")
    values = {name: [] for name in names}
    for tr in traces:
        s = summarize(tr)
        for name in names:
            values[name].append(getattr(s, name))
    return {name: np.asarray(v) for name, v in values.items()}


def run_online(config: PipelineConfig, target: SurfaceGrid | None = None,
               coeffs=None) -> PredictionReport:
    """Predict factors at a geometry and push them through the model.

    The geometry enters either as a surface grid (projected onto the basis)
    or directly as coefficients. Draw i that fails to simulate is skipped;
    more than 1% failures aborts.
    """
    store = ArtifactStore(config.out_dir)
    with _stage(store, "predict"):
        if (target is None) == (coeffs is None):
            raise ValidationError("pass exactly one of target or coeffs")
        if coeffs is None:
            basis = load_basis(store.require(store.basis_json, "basis"))
            c_hat = fit_coefficients(basis, target)
        else:
            c_hat = coeffs if isinstance(coeffs, GeometryCoefficients) \
                else GeometryCoefficients(c=np.asarray(coeffs, dtype=float))
        vgp = load_vector_gp(store.require(store.gp_json, "gp-train"))
        mu_hat, sigma_hat = predict_factors(vgp, c_hat)

        params = config.rom_params()
        ctx = ROMContext(params=params, n_cycles=config.rom_n_cycles,
                         dt=config.rom_dt)
        rng = np.random.default_rng(config.seed + SEED_UQ)
        # predict_factors already clipped the spectrum at zero
        draws = rng.multivariate_normal(mu_hat, sigma_hat,
                                        size=config.uq.n_mc,
                                        check_valid="ignore")
        traces = []
        n_failed = 0
        for draw in draws:
            try:
                traces.append(rom_trace(
                    ctx, CorrectionFactors.from_array(draw)))
            except (SimulationFailed, ValidationError, NumericalError):
                n_failed += 1
        if n_failed > 0.01 * config.uq.n_mc:
            raise NumericalError(
                f"{n_failed}/{config.uq.n_mc} Monte-Carlo draws failed")

        P = np.stack([tr.p for tr in traces])
        V = np.stack([tr.V for tr in traces])
        p_median = np.quantile(P, 0.5, axis=0)
        V_median = np.quantile(V, 0.5, axis=0)
        bands = []
        for level in sorted(config.uq.levels):
            lo, hi = (1.0 - level) / 2.0, (1.0 + level) / 2.0
            bands.append(CredibleBand(
                level=level,
                p_lo=np.quantile(P, lo, axis=0),
                p_hi=np.quantile(P, hi, axis=0),
                V_lo=np.quantile(V, lo, axis=0),
                V_hi=np.quantile(V, hi, axis=0)))

        landmarks = _summary_arrays(traces)
        summary_quantiles = {}
        for name, vals in landmarks.items():
            entry = {"median": float(np.quantile(vals, 0.5))}
            for level in sorted(config.uq.levels):
                lo, hi = (1.0 - level) / 2.0, (1.0 + level) / 2.0
                entry[f"{level:g}"] = [float(np.quantile(vals, lo)),
                                       float(np.quantile(vals, hi))]
            summary_quantiles[name] = entry

        # trust: 99% V_ED band half-width against the 99% noise half-width
        v_ed = landmarks["V_ED"]
        halfwidth = float(np.quantile(v_ed, 0.995)
                          - np.quantile(v_ed, 0.005)) / 2.0
        ref = rom_trace(ctx, CorrectionFactors.from_array(mu_hat))
        _, sigma_v_min, _ = config.noise.levels(ref)
        noise_level = Z_99 * sigma_v_min
        ratio = halfwidth / noise_level
        trust = TrustCheck(band_halfwidth_VED=halfwidth,
                           noise_level=noise_level, ratio=ratio,
                           flag=ratio > config.trust_threshold,
                           threshold=config.trust_threshold)

        return PredictionReport(
            c_hat=c_hat.c, mu_hat=mu_hat, sigma_hat=sigma_hat,
            dt=config.rom_dt, p_median=p_median, V_median=V_median,
            bands=tuple(bands), summary_quantiles=summary_quantiles,
            trust=trust, n_mc=config.uq.n_mc, n_failed=n_failed,
            gp_sha256=sha256_file(store.gp_json),
            config_sha256=config_hash(config), seed=config.seed)


def save_report(report: PredictionReport, path) -> None:
    payload = {
        "schema": REPORT_SCHEMA,
        "c_hat": report.c_hat.tolist(),
        "mu_hat": report.mu_hat.tolist(),
        "sigma_hat": report.sigma_hat.tolist(),
        "dt": report.dt,
        "p_median": report.p_median.tolist(),
        "V_median": report.V_median.tolist(),
        "bands": [{"level": b.level, "p_lo": b.p_lo.tolist(),
                   "p_hi": b.p_hi.tolist(), "V_lo": b.V_lo.tolist(),
                   "V_hi": b.V_hi.tolist()} for b in report.bands],
        "summary_quantiles": report.summary_quantiles,
        "trust": dataclasses.asdict(report.trust),
        "n_mc": report.n_mc,
        "n_failed": report.n_failed,
        "gp_sha256": report.gp_sha256,
        "config_sha256": report.config_sha256,
        "seed": report.seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> PredictionReport:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != REPORT_SCHEMA:
        raise ValidationError(f"unsupported report schema in {path}")
    bands = tuple(CredibleBand(level=b["level"], p_lo=b["p_lo"],
                               p_hi=b["p_hi"], V_lo=b["V_lo"],
                               V_hi=b["V_hi"]) for b in payload["bands"])
    return PredictionReport(
        c_hat=payload["c_hat"], mu_hat=payload["mu_hat"],
        sigma_hat=payload["sigma_hat"], dt=payload["dt"],
        p_median=payload["p_median"], V_median=payload["V_median"],
        bands=bands, summary_quantiles=payload["summary_quantiles"],
        trust=TrustCheck(**payload["trust"]), n_mc=payload["n_mc"],
        n_failed=payload["n_failed"], gp_sha256=payload["gp_sha256"],
        config_sha256=payload["config_sha256"], seed=payload["seed"])


@dataclass(frozen=True)
class UpdateReport:
    accepted: bool
    mu_before: np.ndarray
    sigma_before: np.ndarray
    mu_after: np.ndarray
    sigma_after: np.ndarray


def run_update(config: PipelineConfig, record: TrainingRecord) -> UpdateReport:
    """Insert one calibrated record into the surrogate's training set."""
    store = ArtifactStore(config.out_dir)
    with _stage(store, "update"):
        vgp = load_vector_gp(store.require(store.gp_json, "gp-train"))
        mu_before, sigma_before = predict_factors(vgp, record.c)
        vgp, accepted = add_observation(vgp, record,
                                        min_distance=config.gp_min_distance,
                                        re_optimize=config.gp_reoptimize,
                                        seed=config.seed + SEED_GP)
        mu_after, sigma_after = predict_factors(vgp, record.c)
        if accepted:
            save_vector_gp(vgp, store.gp_json,
                           config={"min_distance": config.gp_min_distance,
                                   "re_optimize": config.gp_reoptimize})
            store.record_artifacts(config, {"gp_state": store.gp_json},
                                   {"gp_training_size": len(vgp.training)})
        report = UpdateReport(accepted=accepted, mu_before=mu_before,
                              sigma_before=sigma_before, mu_after=mu_after,
                              sigma_after=sigma_after)
        payload = {"accepted": accepted,
                   "mu_before": mu_before.tolist(),
                   "sigma_before": sigma_before.tolist(),
                   "mu_after": mu_after.tolist(),
                   "sigma_after": sigma_after.tolist()}
        with open(store.path("update_report.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def emit_plot_data(report: PredictionReport, directory) -> list[str]:
    """Plot-ready CSVs: median p-V loop, per-level band traces, and the
    per-factor Gaussian density curves. Re-emission writes identical bytes."""
    os.makedirs(directory, exist_ok=True)
    written = []
    n = len(report.p_median)
    t = np.arange(n) * report.dt

    loop_path = os.path.join(directory, "loop.csv")
    with open(loop_path, "w", newline="") as fh:
        fh.write("V_ml,p_mmHg\n")
        for v, p in zip(report.V_median, report.p_median):
            fh.write(f"{repr(float(v))},{repr(float(p))}\n")
    written.append(loop_path)

    for band in report.bands:
        name = f"bands_{int(round(band.level * 100))}.csv"
        path = os.path.join(directory, name)
        with open(path, "w", newline="") as fh:
            fh.write("t,p_lo,p_med,p_hi,V_lo,V_med,V_hi\n")
            for k in range(n):
                row = (t[k], band.p_lo[k], report.p_median[k], band.p_hi[k],
                       band.V_lo[k], report.V_median[k], band.V_hi[k])
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        written.append(path)

    sd = np.sqrt(np.clip(np.diag(report.sigma_hat), 0.0, None))
    for k, factor in enumerate(FACTOR_NAMES):
        width = max(sd[k], 1e-6)  # degenerate posterior still plots
        grid = np.linspace(report.mu_hat[k] - 4 * width,
                           report.mu_hat[k] + 4 * width, 201)
        dens = np.exp(-0.5 * ((grid - report.mu_hat[k]) / width) ** 2) \
            / (width * np.sqrt(2.0 * np.pi))
        path = os.path.join(directory, f"density_{factor}.csv")
        with open(path, "w", newline="") as fh:
            fh.write("value,density\n")
            for x, d in zip(grid, dens):
                fh.write(f"{repr(float(x))},{repr(float(d))}\n")
        written.append(path)
    return written
