"""GP tests against a dense textbook oracle (explicit matrix inverse, which
the implementation itself never forms), plus interpolation, hyperparameter
search, and vector-prediction properties."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cardiorom.errors import NotPositiveDefinite
from cardiorom.gp import (
    PAIR_INDICES,
    ScalarGP,
    TrainingRecord,
    cholesky_with_jitter,
    add_observation,
    default_bounds,
    load_vector_gp,
    log_marginal_likelihood,
    make_scalar_gp,
    normalized_distance,
    optimize_length_scales,
    posterior,
    posterior_point,
    predict_factors,
    rbf_kernel,
    save_vector_gp,
    train_vector_gp,
)
from cardiorom.podgeom import GeometryCoefficients


def oracle_kernel(a, b, ls):
    out = np.zeros((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            out[i, j] = math.exp(-0.5 * float(
                np.sum(((a[i] - b[j]) / ls) ** 2)))
    return out


def oracle_posterior(X, y, noise, ls, Q):
    """Direct dense evaluation with an explicit inverse."""
    K_inv = np.linalg.inv(oracle_kernel(X, X, ls) + np.diag(noise ** 2))
    K_s = oracle_kernel(X, Q, ls)
    mean = K_s.T @ K_inv @ y
    cov = oracle_kernel(Q, Q, ls) - K_s.T @ K_inv @ K_s
    return mean, cov


def oracle_lml(X, y, noise, ls):
    K = oracle_kernel(X, X, ls) + np.diag(noise ** 2)
    _, logdet = np.linalg.slogdet(K)
    return float(-0.5 * y @ np.linalg.inv(K) @ y - 0.5 * logdet
                 - 0.5 * len(y) * math.log(2.0 * math.pi))


def random_records(n, seed, zero_noise_first=False):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        c = GeometryCoefficients(c=rng.uniform(-1.0, 1.0, size=4))
        mu = 1.0 + 0.2 * rng.standard_normal(4)
        if zero_noise_first and i == 0:
            sigma = np.zeros((4, 4))
        else:
            a = 0.05 * rng.standard_normal((4, 4))
            sigma = a @ a.T + 1e-4 * np.eye(4)
        records.append(TrainingRecord(c=c, mu=mu, sigma_mat=sigma))
    return records


class TestKernel:
    def test_identical_points(self):
        assert rbf_kernel([1.0, 2.0], [1.0, 2.0], [0.5, 0.5]) == 1.0

    def test_sqrt2_scale_distance(self):
        l = 0.7
        assert rbf_kernel([0.0], [math.sqrt(2.0) * l], [l]) == pytest.approx(
            math.exp(-1.0), rel=1e-12)

    @given(x=st.floats(-5, 5), y=st.floats(-5, 5), l=st.floats(0.1, 3.0))
    def test_symmetric(self, x, y, l):
        assert rbf_kernel([x], [y], [l]) == rbf_kernel([y], [x], [l])

    def test_kernel_matrix_unit_diagonal(self):
        rng = np.random.default_rng(1)
        gp = make_scalar_gp(rng.normal(size=(6, 3)), np.zeros(6), np.zeros(6))
        K = np.array([[rbf_kernel(a, b, gp.length_scales)
                       for b in gp.inputs] for a in gp.inputs])
        np.testing.assert_allclose(K, K.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(K), 1.0, atol=1e-12)


class TestPosterior:
    def test_matches_dense_oracle_1d(self):
        X = np.array([[0.0], [0.7], [1.5]])
        y = np.array([0.3, -0.2, 0.9])
        noise = np.array([0.1, 0.05, 0.2])
        ls = np.array([0.6])
        gp = ScalarGP(inputs=X, targets=y, noise=noise, length_scales=ls,
                      bounds=default_bounds(X))
        Q = np.linspace(-0.5, 2.0, 9)[:, None]
        mean, cov = posterior(gp, Q)
        o_mean, o_cov = oracle_posterior(X, y, noise, ls, Q)
        np.testing.assert_allclose(mean, o_mean, atol=1e-12)
        np.testing.assert_allclose(cov, o_cov, atol=1e-12)

    def test_matches_dense_oracle_4d(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, size=(12, 4))
        y = rng.standard_normal(12)
        noise = rng.uniform(0.01, 0.3, size=12)
        gp = make_scalar_gp(X, y, noise)
        Q = rng.uniform(-1, 1, size=(7, 4))
        mean, cov = posterior(gp, Q)
        o_mean, o_cov = oracle_posterior(X, y, noise, gp.length_scales, Q)
        np.testing.assert_allclose(mean, o_mean, atol=1e-10)
        np.testing.assert_allclose(cov, o_cov, atol=1e-10)

    def test_zero_noise_interpolates(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, size=(8, 2))
        y = rng.standard_normal(8)
        gp = make_scalar_gp(X, y, np.zeros(8))
        for i in range(8):
            m, v = posterior_point(gp, X[i])
            assert m == pytest.approx(y[i], abs=1e-8)
            assert abs(v) <= 1e-10

    def test_no_training_points_gives_prior(self):
        gp = ScalarGP(inputs=np.zeros((0, 2)), targets=np.zeros(0),
                      noise=np.zeros(0), length_scales=np.array([1.0, 1.0]),
                      bounds=np.array([[0.02, 2.0], [0.02, 2.0]]))
        mean, cov = posterior(gp, [[0.3, -0.4]])
        assert mean[0] == 0.0
        assert cov[0, 0] == 1.0

    def test_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(-1, 1, size=(10, 3))
        gp = make_scalar_gp(X, rng.standard_normal(10),
                            rng.uniform(0, 0.2, size=10))
        Q = rng.uniform(-2, 2, size=(50, 3))
        _, cov = posterior(gp, Q)
        assert np.all(np.diag(cov) <= 1.0 + 1e-12)


class TestLogMarginalLikelihood:
    def test_single_zero_observation(self):
        gp = make_scalar_gp([[0.0]], [0.0], [0.0])
        assert log_marginal_likelihood(gp) == pytest.approx(
            -0.5 * math.log(2.0 * math.pi), abs=1e-12)

    def test_reorder_invariant(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(-1, 1, size=(9, 2))
        y = rng.standard_normal(9)
        noise = rng.uniform(0.05, 0.2, size=9)
        gp = make_scalar_gp(X, y, noise)
        perm = rng.permutation(9)
        gp_p = make_scalar_gp(X[perm], y[perm], noise[perm],
                              length_scales=gp.length_scales)
        assert log_marginal_likelihood(gp) == pytest.approx(
            log_marginal_likelihood(gp_p), abs=1e-10)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(-1, 1, size=(11, 4))
        y = rng.standard_normal(11)
        noise = rng.uniform(0.01, 0.2, size=11)
        gp = make_scalar_gp(X, y, noise)
        assert log_marginal_likelihood(gp) == pytest.approx(
            oracle_lml(X, y, noise, gp.length_scales), abs=1e-10)


class TestOptimizeLengthScales:
    def test_recovers_known_scale(self):
        # Draw from a GP with known length scale well inside the bounds.
        rng = np.random.default_rng(11)
        X = np.sort(rng.uniform(0.0, 2.0, size=30))[:, None]
        l_true = 0.5
        K = oracle_kernel(X, X, [l_true]) + 1e-8 * np.eye(30)
        y = np.linalg.cholesky(K) @ rng.standard_normal(30)
        gp = make_scalar_gp(X, y, np.full(30, 0.05))
        opt = optimize_length_scales(gp)
        assert opt.length_scales[0] == pytest.approx(l_true, rel=0.25)

    def test_huge_noise_pushes_scale_to_upper_bound(self):
        # noise twice the whole signal range: complexity term dominates
        X = np.linspace(0.0, 1.0, 12)[:, None]
        y = X[:, 0].copy()
        gp = make_scalar_gp(X, y, np.full(12, 2.0))
        opt = optimize_length_scales(gp)
        assert opt.length_scales[0] == pytest.approx(gp.bounds[0, 1],
                                                     rel=1e-3)

    def test_bounds_respected(self):
        rng = np.random.default_rng(12)
        X = rng.uniform(-1, 1, size=(15, 4))
        gp = make_scalar_gp(X, rng.standard_normal(15),
                            rng.uniform(0.01, 0.1, size=15))
        opt = optimize_length_scales(gp)
        assert np.all(opt.length_scales >= gp.bounds[:, 0] * (1 - 1e-12))
        assert np.all(opt.length_scales <= gp.bounds[:, 1] * (1 + 1e-12))

    def test_never_below_start(self):
        rng = np.random.default_rng(13)
        X = rng.uniform(-1, 1, size=(10, 2))
        gp = make_scalar_gp(X, rng.standard_normal(10), np.full(10, 0.1))
        opt = optimize_length_scales(gp)
        assert (log_marginal_likelihood(opt)
                >= log_marginal_likelihood(gp) - 1e-12)


class TestVectorGP:
    def test_zero_noise_record_reproduced(self):
        records = random_records(6, seed=21, zero_noise_first=True)
        vgp = train_vector_gp(records, re_optimize=False)
        mu_hat, sigma_hat = predict_factors(vgp, records[0].c)
        np.testing.assert_allclose(mu_hat, records[0].mu, atol=1e-8)
        np.testing.assert_allclose(sigma_hat, records[0].sigma_mat, atol=1e-8)

    def test_min_eigenvalue_floor(self):
        records = random_records(8, seed=22)
        vgp = train_vector_gp(records, re_optimize=False)
        rng = np.random.default_rng(23)
        for _ in range(100):
            _, sigma = predict_factors(vgp, rng.uniform(-1.5, 1.5, size=4))
            assert np.linalg.eigvalsh(sigma)[0] >= -1e-12

    def test_diagonal_recomputation(self):
        # diag equals the per-factor posterior variance plus the PSD shift
        records = random_records(8, seed=24)
        vgp = train_vector_gp(records, re_optimize=False)
        q = np.array([0.2, -0.3, 0.5, 0.1])
        mu_hat, sigma_hat = predict_factors(vgp, q)
        var = np.array([max(posterior_point(gp, q)[1], 0.0)
                        for gp in vgp.mean_gps])
        sd = np.sqrt(var)
        raw = np.diag(var).copy()
        for k, (i, j) in enumerate(PAIR_INDICES):
            rho = np.clip(posterior_point(vgp.corr_gps[k], q)[0], -1.0, 1.0)
            raw[i, j] = raw[j, i] = rho * sd[i] * sd[j]
        lam = min(np.linalg.eigvalsh(raw)[0], 0.0)
        np.testing.assert_allclose(np.diag(sigma_hat), var + abs(lam),
                                   atol=1e-12)

    def test_training_correlations_reproduced(self):
        records = random_records(7, seed=25)
        vgp = train_vector_gp(records, re_optimize=False)
        for rec in records:
            rho_ref = rec.correlations()
            for k in range(len(PAIR_INDICES)):
                rho, _ = posterior_point(vgp.corr_gps[k], rec.c.c)
                assert rho == pytest.approx(rho_ref[k], abs=1e-8)

    def test_single_factor_reduction(self):
        # Diagonal covariances keep the correlation GPs at zero, so the
        # vector prediction is exactly the stack of scalar posteriors.
        rng = np.random.default_rng(26)
        records = []
        for _ in range(6):
            records.append(TrainingRecord(
                c=GeometryCoefficients(c=rng.uniform(-1, 1, size=4)),
                mu=1.0 + 0.1 * rng.standard_normal(4),
                sigma_mat=np.diag(rng.uniform(1e-4, 0.01, size=4))))
        vgp = train_vector_gp(records, re_optimize=False)
        q = rng.uniform(-1, 1, size=4)
        mu_hat, sigma_hat = predict_factors(vgp, q)
        assert np.all(sigma_hat == np.diag(np.diag(sigma_hat)))
        for k, gp in enumerate(vgp.mean_gps):
            m, v = posterior_point(gp, q)
            assert mu_hat[k] == pytest.approx(1.0 + m, abs=1e-14)
            assert sigma_hat[k, k] == pytest.approx(v, abs=1e-14)


class TestAddObservation:
    def test_duplicate_rejected(self):
        records = random_records(6, seed=31)
        vgp = train_vector_gp(records, re_optimize=False)
        _, accepted = add_observation(vgp, records[0], re_optimize=False)
        assert not accepted

    def test_far_point_accepted_and_interpolated(self):
        records = random_records(6, seed=32)
        vgp = train_vector_gp(records, re_optimize=False)
        new = TrainingRecord(c=GeometryCoefficients(c=[3.0, 3.0, 3.0, 3.0]),
                             mu=np.array([1.2, 0.8, 1.1, 0.9]),
                             sigma_mat=np.zeros((4, 4)))
        vgp2, accepted = add_observation(vgp, new, re_optimize=False)
        assert accepted
        assert len(vgp2.training) == 7
        mu_hat, _ = predict_factors(vgp2, new.c)
        np.testing.assert_allclose(mu_hat, new.mu, atol=1e-8)

    def test_acceptance_order_independent(self):
        records = random_records(6, seed=33)
        probe = TrainingRecord(
            c=GeometryCoefficients(c=records[2].c.c + 1e-4),
            mu=np.ones(4), sigma_mat=0.01 * np.eye(4))
        rng = np.random.default_rng(34)
        decisions = []
        for _ in range(4):
            order = rng.permutation(len(records))
            vgp = train_vector_gp([records[i] for i in order],
                                  re_optimize=False)
            decisions.append(add_observation(vgp, probe,
                                             re_optimize=False)[1])
        assert len(set(decisions)) == 1

    def test_uncertainty_does_not_increase_at_insert(self):
        records = random_records(6, seed=35)
        vgp = train_vector_gp(records, re_optimize=False)
        new = TrainingRecord(c=GeometryCoefficients(c=[0.9, -0.9, 0.9, -0.9]),
                             mu=np.ones(4), sigma_mat=1e-4 * np.eye(4))
        before = [posterior_point(gp, new.c.c)[1] for gp in vgp.mean_gps]
        vgp2, accepted = add_observation(vgp, new, re_optimize=False)
        assert accepted
        after = [posterior_point(gp, new.c.c)[1] for gp in vgp2.mean_gps]
        assert all(a <= b + 1e-12 for a, b in zip(after, before))

    def test_normalized_distance_zero_at_training_point(self):
        records = random_records(5, seed=36)
        vgp = train_vector_gp(records, re_optimize=False)
        assert normalized_distance(vgp, records[3].c) == 0.0


class TestSerialization:
    def test_round_trip_preserves_predictions(self, tmp_path):
        records = random_records(6, seed=41)
        vgp = train_vector_gp(records, re_optimize=True, seed=0)
        path = tmp_path / "gp.json"
        save_vector_gp(vgp, path)
        back = load_vector_gp(path)
        rng = np.random.default_rng(42)
        for _ in range(5):
            q = rng.uniform(-1, 1, size=4)
            mu_a, sig_a = predict_factors(vgp, q)
            mu_b, sig_b = predict_factors(back, q)
            np.testing.assert_allclose(mu_a, mu_b, atol=1e-12)
            np.testing.assert_allclose(sig_a, sig_b, atol=1e-12)

    def test_schema_checked(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema": 99, "records": [], "length_scales": {}}')
        with pytest.raises(ValueError, match="schema"):
            load_vector_gp(path)


class TestValidation:
    def test_asymmetric_covariance_rejected(self):
        sigma = np.eye(4)
        sigma[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            TrainingRecord(c=GeometryCoefficients(c=np.zeros(4)),
                           mu=np.ones(4), sigma_mat=sigma)

    def test_unfixable_matrix_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))
