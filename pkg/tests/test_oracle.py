"""Oracle tests: ground-truth field bounds and trends, synthetic trace
determinism and noise statistics, CSV ingestion with its analytic
interpolation bound, and dataset round-trips."""

import csv

import numpy as np
import pytest

from cardiorom.calibration import (
    ChainConfig,
    NoiseCovariance,
    NoiseModel,
    NoiseSpec,
    Prior,
    ROMContext,
    calibrate,
    rom_trace,
)
from cardiorom.errors import GridError, ParseError, ValidationError
from cardiorom.onefiber import default_parameters
from cardiorom.oracle import (
    FomDataset,
    FomRecord,
    GridSpec,
    GroundTruthField,
    build_synthetic_dataset,
    field_from_cloud,
    ingest_fom_csv,
    load_field,
    load_fom_dataset,
    save_field,
    save_fom_dataset,
    synth_fom_trace,
    validate_field,
    write_fom_csv,
)
from cardiorom.podgeom import GeometryCoefficients


@pytest.fixture(scope="module")
def cloud():
    rng = np.random.default_rng(0)
    return rng.normal(size=(80, 4)) * np.array([2.0, 1.0, 0.5, 0.25])


@pytest.fixture(scope="module")
def field(cloud):
    return field_from_cloud(cloud)


class TestGroundTruthField:
    def test_bounded_over_cloud(self, field, cloud):
        values = field.evaluate_many(cloud)
        assert values.min() >= 0.5
        assert values.max() <= 1.5
        assert values[:, 1].min() >= 0.2

    def test_trends_along_first_coefficient(self, field, cloud):
        rng = np.random.default_rng(1)
        base = rng.uniform(cloud.min(axis=0), cloud.max(axis=0), size=(50, 4))
        delta = np.zeros(4)
        delta[0] = 0.05
        up = field.evaluate_many(base + delta)
        down = field.evaluate_many(base - delta)
        diff = up - down
        assert np.all(diff[:, 0] > 0)  # alpha rises with c1
        assert np.all(diff[:, 1] < 0)  # beta falls
        assert np.all(diff[:, 2] > 0)
        assert np.all(diff[:, 3] > 0)

    def test_evaluate_matches_evaluate_many(self, field, cloud):
        many = field.evaluate_many(cloud[:10])
        for i in range(10):
            single = field.evaluate_array(cloud[i])
            np.testing.assert_allclose(single, many[i], atol=1e-15)
            factors = field.evaluate(cloud[i])
            assert factors.alpha == pytest.approx(single[0])
            assert factors.lam == pytest.approx(single[3])

    def test_accepts_coefficient_objects(self, field, cloud):
        wrapped = GeometryCoefficients(c=cloud[0])
        np.testing.assert_array_equal(field.evaluate_array(wrapped),
                                      field.evaluate_array(cloud[0]))

    def test_out_of_range_field_rejected(self, cloud):
        with pytest.raises(ValidationError, match="leaves"):
            field_from_cloud(cloud, strength=0.8)

    def test_validate_field_direct(self, field, cloud):
        validate_field(field, cloud)  # no raise
        shifted = GroundTruthField(offset=field.offset + 0.6,
                                   slope=field.slope, amp=field.amp,
                                   direction=field.direction)
        with pytest.raises(ValidationError):
            validate_field(shifted, cloud)

    def test_one_dimensional_cloud(self):
        cloud1 = np.linspace(-2.0, 2.0, 30)[:, None]
        f = field_from_cloud(cloud1)
        assert f.dim == 1
        np.testing.assert_array_equal(f.amp, np.zeros(4))
        validate_field(f, cloud1)

    def test_serialization_round_trip(self, field, cloud, tmp_path):
        path = tmp_path / "field.json"
        save_field(field, path)
        back = load_field(path)
        np.testing.assert_array_equal(back.slope, field.slope)
        np.testing.assert_array_equal(back.evaluate_array(cloud[5]),
                                      field.evaluate_array(cloud[5]))

    def test_bad_shapes_rejected(self):
        with pytest.raises(ValidationError):
            GroundTruthField(offset=np.ones(3), slope=np.zeros((4, 2)),
                             amp=np.zeros(4), direction=np.zeros((4, 2)))


@pytest.fixture(scope="module")
def synth_setup(field, cloud):
    params = default_parameters()
    dt = 8.0
    n = int(round(params.tcycle / dt))
    noise = NoiseModel(sigma_p=np.full(n, 2.5),
                       sigma_V=np.linspace(0.25, 1.15, n),
                       tau_p=params.tcycle - dt, tau_V=params.tcycle - dt,
                       dt=dt)
    return params, noise, cloud[3]


class TestSynthFomTrace:
    def test_zero_noise_equals_clean_rom(self, field, synth_setup):
        params, _, c = synth_setup
        trace = synth_fom_trace(c, field, params, None, n_cycles=4, dt=8.0)
        clean = rom_trace(ROMContext(params=params, n_cycles=4, dt=8.0),
                          field.evaluate(c))
        np.testing.assert_array_equal(trace.p, clean.p)
        np.testing.assert_array_equal(trace.V, clean.V)

    def test_seed_determinism(self, field, synth_setup):
        params, noise, c = synth_setup
        a = synth_fom_trace(c, field, params, noise, seed=7, n_cycles=4)
        b = synth_fom_trace(c, field, params, noise, seed=7, n_cycles=4)
        other = synth_fom_trace(c, field, params, noise, seed=8, n_cycles=4)
        np.testing.assert_array_equal(a.p, b.p)
        np.testing.assert_array_equal(a.V, b.V)
        assert not np.array_equal(a.p, other.p)

    def test_noise_component_is_documented_draw(self, field, synth_setup):
        params, noise, c = synth_setup
        clean = synth_fom_trace(c, field, params, None, n_cycles=4, dt=8.0)
        noisy = synth_fom_trace(c, field, params, noise, seed=3, n_cycles=4)
        nu_p, nu_V = NoiseCovariance(noise).sample(np.random.default_rng(3))
        # subtraction reverses the addition only up to rounding
        np.testing.assert_allclose(noisy.p - clean.p, nu_p, atol=1e-10)
        np.testing.assert_allclose(noisy.V - clean.V, nu_V, atol=1e-10)

    def test_noise_draw_covariance(self, synth_setup):
        # 10^4 draws of the per-seed noise component (identical to
        # synth minus clean by the test above) against the dense target
        _, noise, _ = synth_setup
        cov = NoiseCovariance(noise)
        draws = np.empty((10_000, 2 * noise.n))
        for seed in range(draws.shape[0]):
            nu_p, nu_V = cov.sample(np.random.default_rng(seed))
            draws[seed] = np.concatenate([nu_p, nu_V])
        sample_cov = np.cov(draws, rowvar=False)
        target = cov.dense()
        rel = np.linalg.norm(sample_cov - target) / np.linalg.norm(target)
        assert rel < 0.05

    def test_grid_mismatch_rejected(self, field, synth_setup):
        params, _, c = synth_setup
        bad = NoiseModel(sigma_p=np.full(50, 2.5), sigma_V=np.full(50, 0.5),
                         tau_p=100.0, tau_V=100.0, dt=8.0)
        with pytest.raises(ValidationError, match="grid"):
            synth_fom_trace(c, field, params, bad, n_cycles=4)

    def test_identifiability_zero_noise(self, field, cloud):
        # calibrating against a clean synthetic trace recovers theta*(c)
        params = default_parameters()
        c = cloud[7]
        theta_star = field.evaluate_array(c)
        data = synth_fom_trace(c, field, params, None, n_cycles=4, dt=2.0)
        # the zero-noise posterior is sharp; the proposal must shrink far
        # below the prior scale, which needs a longer adaptation with resets
        cfg = ChainConfig(n_adaptive=5_000, reset_every=1_000,
                          n_regular=5_000, n_burnin=1_000, seed=4)
        summary = calibrate(data, params, NoiseSpec(), Prior(), cfg,
                            n_cycles=4)
        sd = np.sqrt(np.diag(summary.sigma_mat))
        assert np.all(np.abs(summary.mu - theta_star) <= 2.0 * sd)


class TestIngestFomCsv:
    def make_trace(self, params, dt=2.0):
        return rom_trace(ROMContext(params=params, n_cycles=3, dt=dt),
                         field_from_cloud(np.zeros((4, 1))).evaluate([0.0]))

    def test_round_trip_lossless(self, tmp_path):
        params = default_parameters()
        trace = self.make_trace(params)
        path = tmp_path / "trace.csv"
        write_fom_csv(trace, path)
        back = ingest_fom_csv(path, GridSpec(dt=trace.dt, n=trace.n))
        np.testing.assert_array_equal(back.p, trace.p)
        np.testing.assert_array_equal(back.V, trace.V)

    def test_shuffled_rows_rejected(self, tmp_path):
        params = default_parameters()
        trace = self.make_trace(params)
        path = tmp_path / "trace.csv"
        write_fom_csv(trace, path)
        rows = path.read_text().splitlines()
        rng = np.random.default_rng(2)
        body = [rows[1 + i] for i in rng.permutation(len(rows) - 1)]
        path.write_text("\n".join([rows[0]] + body) + "\n")
        with pytest.raises(ParseError, match="increasing"):
            ingest_fom_csv(path, GridSpec(dt=trace.dt, n=trace.n))

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,pressure,volume\n0,1,2\n1,1,2\n2,1,2\n3,1,2\n")
        with pytest.raises(ParseError, match="header"):
            ingest_fom_csv(path, GridSpec(dt=1.0, n=4))

    def test_non_numeric_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t_ms,p_mmHg,V_ml\n0,1,2\n1,x,2\n2,1,2\n3,1,2\n")
        with pytest.raises(ParseError, match="numeric"):
            ingest_fom_csv(path, GridSpec(dt=1.0, n=4))

    def test_cycle_length_mismatch_rejected(self, tmp_path):
        params = default_parameters()
        trace = self.make_trace(params)  # 800 ms cycle
        path = tmp_path / "trace.csv"
        write_fom_csv(trace, path)
        with pytest.raises(GridError, match="cycle length"):
            ingest_fom_csv(path, GridSpec(dt=trace.dt, n=trace.n + 20))

    def test_off_grid_resampling_error_bound(self, tmp_path):
        # synthetic sine cycle sampled on an offset coarse grid; linear
        # interpolation error stays under (Lipschitz estimate) * step / 2
        period, n_file, offset = 800.0, 109, 3.1
        h = period / n_file
        t = offset + np.arange(n_file) * h
        p = 100.0 + 20.0 * np.sin(2.0 * np.pi * t / period)
        v = 80.0 + 15.0 * np.cos(2.0 * np.pi * t / period)
        path = tmp_path / "sine.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_ms", "p_mmHg", "V_ml"])
            for row in zip(t, p, v):
                writer.writerow([repr(float(x)) for x in row])
        spec = GridSpec(dt=2.0, n=400)
        got = ingest_fom_csv(path, spec)
        t_new = offset + np.arange(spec.n) * spec.dt
        true_p = 100.0 + 20.0 * np.sin(2.0 * np.pi * t_new / period)
        lipschitz = np.abs(np.diff(p) / h).max()
        err = np.abs(got.p - true_p).max()
        assert 0.0 < err <= lipschitz * h / 2.0


class TestFomDataset:
    def test_build_and_round_trip(self, field, cloud, tmp_path):
        params = default_parameters()
        dataset = build_synthetic_dataset(cloud[:3], field, params, None,
                                           seed=5, n_cycles=3, dt=8.0)
        assert len(dataset) == 3
        assert dataset.dt == 8.0
        out = tmp_path / "ds"
        save_fom_dataset(dataset, out)
        back = load_fom_dataset(out)
        assert len(back) == 3
        for a, b in zip(dataset.records, back.records):
            np.testing.assert_array_equal(a.coeffs.c, b.coeffs.c)
            np.testing.assert_array_equal(a.trace.p, b.trace.p)
            assert b.provenance == "synthetic"

    def test_per_record_seeding(self, field, cloud, synth_setup):
        params, noise, _ = synth_setup
        dataset = build_synthetic_dataset(cloud[:2], field, params, noise,
                                           seed=11, n_cycles=3)
        direct = synth_fom_trace(cloud[1], field, params, noise, seed=12,
                                 n_cycles=3)
        np.testing.assert_array_equal(dataset.records[1].trace.p, direct.p)

    def test_mixed_grids_rejected(self, field, cloud):
        params = default_parameters()
        a = synth_fom_trace(cloud[0], field, params, None, n_cycles=2, dt=8.0)
        b = synth_fom_trace(cloud[1], field, params, None, n_cycles=2, dt=4.0)
        rec = lambda tr: FomRecord(coeffs=GeometryCoefficients(c=cloud[0]),
                                   trace=tr, provenance="synthetic")
        with pytest.raises(ValidationError, match="share"):
            FomDataset(records=(rec(a), rec(b)))

    def test_bad_provenance_rejected(self, field, cloud):
        params = default_parameters()
        tr = synth_fom_trace(cloud[0], field, params, None, n_cycles=2, dt=8.0)
        with pytest.raises(ValidationError, match="provenance"):
            FomRecord(coeffs=GeometryCoefficients(c=cloud[0]), trace=tr,
                      provenance="guess")

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError, match="at least one"):
            FomDataset(records=())
