"""Gaussian-process regression for correction-factor fields.

A ScalarGP is a zero-prior-mean RBF regressor with per-point noise and
anisotropic length scales optimized by multi-start marginal-likelihood
maximization. The VectorGP bundles four mean GPs (trained on factor
deviations from unity) and six zero-noise correlation GPs; predictions
reassemble a full 4x4 covariance, clamping correlations to [-1, 1] and
shifting out any negative eigenvalue. Trained objects are immutable;
sequential learning returns new values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import NotPositiveDefinite
from .onefiber.parameters import FACTOR_NAMES
from .podgeom import GeometryCoefficients

SCHEMA_VERSION = 1
N_FACTORS = 4
# Upper-triangle order of the correlation entries.
PAIR_INDICES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

# Bounds are [0.02 l_max, 2 l_max] with l_max the per-direction data range.
_BOUND_LO_FRACTION = 0.02
_BOUND_HI_FRACTION = 2.0
# Acceptance threshold for new observations, in range-normalized distance.
MIN_DISTANCE = 0.02

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def rbf_kernel(ci, cj, length_scales) -> float:
    """exp(-sum_d (ci_d - cj_d)^2 / (2 l_d^2))."""
    ci = np.asarray(ci, dtype=float)
    cj = np.asarray(cj, dtype=float)
    ls = np.asarray(length_scales, dtype=float)
    if ci.shape != cj.shape:
        raise ValueError("kernel arguments must share a dimension")
    return float(np.exp(-0.5 * np.sum(((ci - cj) / ls) ** 2)))


def _kernel_matrix(a: np.ndarray, b: np.ndarray, ls: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.exp(-0.5 * np.sum((diff / ls) ** 2, axis=2))


def cholesky_with_jitter(K: np.ndarray) -> np.ndarray:
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        "kernel matrix not positive definite after jitter escalation to 1e-6")


def default_bounds(inputs: np.ndarray) -> np.ndarray:
    """Per-direction [0.02 l_max, 2 l_max]; degenerate directions get [0.02, 2]."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    span = inputs.max(axis=0) - inputs.min(axis=0) if len(inputs) else \
        np.zeros(inputs.shape[1])
    lo = np.where(span > 0, _BOUND_LO_FRACTION * span, _BOUND_LO_FRACTION)
    hi = np.where(span > 0, _BOUND_HI_FRACTION * span, _BOUND_HI_FRACTION)
    return np.column_stack([lo, hi])


@dataclass(frozen=True)
class ScalarGP:
    """Immutable RBF regressor; the Cholesky factor is cached at construction."""

    inputs: np.ndarray        # (n, d)
    targets: np.ndarray       # (n,)
    noise: np.ndarray         # (n,) standard deviations
    length_scales: np.ndarray  # (d,)
    bounds: np.ndarray        # (d, 2)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.targets, dtype=float)
        s = np.asarray(self.noise, dtype=float)
        ls = np.asarray(self.length_scales, dtype=float)
        if not (len(x) == len(y) == len(s)):
            raise ValueError("inputs, targets, and noise must align")
        if np.any(ls <= 0):
            raise ValueError("length scales must be positive")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "noise", s)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "bounds",
                           np.asarray(self.bounds, dtype=float))
        if len(x):
            K = _kernel_matrix(x, x, ls) + np.diag(s ** 2)
            L = cholesky_with_jitter(K)
            alpha = cho_solve((L, True), y)
        else:
            L = np.zeros((0, 0))
            alpha = np.zeros(0)
        object.__setattr__(self, "_L", L)
        object.__setattr__(self, "_alpha", alpha)

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def make_scalar_gp(inputs, targets, noise, length_scales=None,
                   bounds=None) -> ScalarGP:
    """ScalarGP with data-derived bounds; initial scales at the geometric
    midpoint of the bounds unless given."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if bounds is None:
        bounds = default_bounds(inputs)
    bounds = np.asarray(bounds, dtype=float)
    if length_scales is None:
        length_scales = np.sqrt(bounds[:, 0] * bounds[:, 1])
    return ScalarGP(inputs=inputs, targets=np.asarray(targets, dtype=float),
                    noise=np.asarray(noise, dtype=float),
                    length_scales=np.asarray(length_scales, dtype=float),
                    bounds=bounds)


def posterior(gp: ScalarGP, c_hat) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and covariance matrix at the query points."""
    q = np.atleast_2d(np.asarray(c_hat, dtype=float))
    k_ss = _kernel_matrix(q, q, gp.length_scales)
    if gp.n == 0:
        return np.zeros(len(q)), k_ss
    k_xs = _kernel_matrix(gp.inputs, q, gp.length_scales)
    mean = k_xs.T @ gp._alpha
    v = solve_triangular(gp._L, k_xs, lower=True)
    cov = k_ss - v.T @ v
    return mean, cov


def posterior_point(gp: ScalarGP, c_hat) -> tuple[float, float]:
    """Scalar mean and variance at a single query point."""
    mean, cov = posterior(gp, np.atleast_2d(np.asarray(c_hat, dtype=float)))
    return float(mean[0]), float(cov[0, 0])


def log_marginal_likelihood(gp: ScalarGP) -> float:
    if gp.n == 0:
        return 0.0
    return float(-0.5 * gp.targets @ gp._alpha
                 - np.sum(np.log(np.diag(gp._L)))
                 - 0.5 * gp.n * np.log(2.0 * np.pi))


def optimize_length_scales(gp: ScalarGP, n_starts: int = 8,
                           seed: int = 0) -> ScalarGP:
    """Best length scales from multi-start bounded quasi-Newton on log scales.

    The incumbent scales join the log-uniform random starts, and the best
    log-marginal-likelihood over all starts and polished results is kept, so
    the outcome never falls below any starting point.
    """
    if gp.n < 2:
        return gp
    log_lo = np.log(gp.bounds[:, 0])
    log_hi = np.log(gp.bounds[:, 1])

    def neg_lml(log_ls):
        try:
            return -log_marginal_likelihood(replace(gp,
                                                    length_scales=np.exp(log_ls)))
        except NotPositiveDefinite:
            return 1e12

    rng = np.random.default_rng(seed)
    starts = [np.clip(np.log(gp.length_scales), log_lo, log_hi)]
    starts += list(rng.uniform(log_lo, log_hi, size=(n_starts, gp.dim)))
    best_ls, best_val = None, np.inf
    for x0 in starts:
        for cand in (x0, minimize(neg_lml, x0, method="L-BFGS-B",
                                  bounds=list(zip(log_lo, log_hi))).x):
            val = neg_lml(cand)
            if val < best_val:
                best_val, best_ls = val, np.exp(np.clip(cand, log_lo, log_hi))
    return replace(gp, length_scales=best_ls)


@dataclass(frozen=True)
class TrainingRecord:
    """Calibrated factor distribution at one geometry: mean and covariance."""

    c: GeometryCoefficients
    mu: np.ndarray
    sigma_mat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma_mat",
                           np.asarray(self.sigma_mat, dtype=float))
        if self.mu.shape != (N_FACTORS,):
            raise ValueError(f"mean must have {N_FACTORS} entries")
        if self.sigma_mat.shape != (N_FACTORS, N_FACTORS):
            raise ValueError("covariance must be 4x4")
        if not np.allclose(self.sigma_mat, self.sigma_mat.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if np.any(np.diag(self.sigma_mat) < 0):
            raise ValueError("variances must be nonnegative")
        rho = self.correlations()
        if np.any(np.abs(rho) > 1.0 + 1e-12):
            raise ValueError("implied correlations must lie in [-1, 1]")

    def correlations(self) -> np.ndarray:
        """Upper-triangle correlations in PAIR_INDICES order; 0 where a
        variance vanishes."""
        sd = np.sqrt(np.diag(self.sigma_mat))
        out = np.zeros(len(PAIR_INDICES))
        for k, (i, j) in enumerate(PAIR_INDICES):
            if sd[i] > 0 and sd[j] > 0:
                out[k] = self.sigma_mat[i, j] / (sd[i] * sd[j])
        return out


@dataclass(frozen=True)
class VectorGP:
    """Four mean GPs on (factor - 1) and six zero-noise correlation GPs."""

    mean_gps: tuple[ScalarGP, ...]
    corr_gps: tuple[ScalarGP, ...]
    training: tuple[TrainingRecord, ...]

    @property
    def inputs(self) -> np.ndarray:
        return self.mean_gps[0].inputs


def _coeff_vector(c) -> np.ndarray:
    return c.c if isinstance(c, GeometryCoefficients) else \
        np.asarray(c, dtype=float)


def train_vector_gp(records, re_optimize: bool = True,
                    seed: int = 0) -> VectorGP:
    records = tuple(records)
    if not records:
        raise ValueError("need at least one training record")
    X = np.vstack([_coeff_vector(r.c) for r in records])
    bounds = default_bounds(X)
    mean_gps = []
    for k in range(N_FACTORS):
        gp = make_scalar_gp(X, [r.mu[k] - 1.0 for r in records],
                            [np.sqrt(r.sigma_mat[k, k]) for r in records],
                            bounds=bounds)
        mean_gps.append(optimize_length_scales(gp, seed=seed)
                        if re_optimize else gp)
    corr_gps = []
    rhos = np.vstack([r.correlations() for r in records])
    for k in range(len(PAIR_INDICES)):
        gp = make_scalar_gp(X, rhos[:, k], np.zeros(len(records)),
                            bounds=bounds)
        corr_gps.append(optimize_length_scales(gp, seed=seed)
                        if re_optimize else gp)
    return VectorGP(mean_gps=tuple(mean_gps), corr_gps=tuple(corr_gps),
                    training=records)


def predict_factors(vgp: VectorGP, c_hat) -> tuple[np.ndarray, np.ndarray]:
    """Factor mean vector and PSD-restored 4x4 covariance at a query geometry."""
    q = _coeff_vector(c_hat)
    mu_hat = np.empty(N_FACTORS)
    sd_hat = np.empty(N_FACTORS)
    for k, gp in enumerate(vgp.mean_gps):
        m, var = posterior_point(gp, q)
        mu_hat[k] = 1.0 + m
        sd_hat[k] = np.sqrt(max(var, 0.0))
    sigma_hat = np.diag(sd_hat ** 2)
    for k, (i, j) in enumerate(PAIR_INDICES):
        rho, _ = posterior_point(vgp.corr_gps[k], q)
        rho = min(1.0, max(-1.0, rho))
        sigma_hat[i, j] = sigma_hat[j, i] = rho * sd_hat[i] * sd_hat[j]
    lam_min = min(float(np.linalg.eigvalsh(sigma_hat)[0]), 0.0)
    return mu_hat, sigma_hat - lam_min * np.eye(N_FACTORS)


def normalized_distance(vgp: VectorGP, c_hat) -> float:
    """Distance to the nearest training input, each dimension scaled by its
    data range (degenerate directions by 1)."""
    X = vgp.inputs
    span = X.max(axis=0) - X.min(axis=0)
    span = np.where(span > 0, span, 1.0)
    d = (X - _coeff_vector(c_hat)) / span
    return float(np.sqrt(np.sum(d ** 2, axis=1)).min())


def add_observation(vgp: VectorGP, record: TrainingRecord,
                    min_distance: float = MIN_DISTANCE,
                    re_optimize: bool = True,
                    seed: int = 0) -> tuple[VectorGP, bool]:
    """Insert a record if it is far enough from the training set.

    Nearby points are fully correlated at the minimum length scale, so they
    carry no new information and are rejected.
    """
    if normalized_distance(vgp, record.c) <= min_distance:
        return vgp, False
    return train_vector_gp(vgp.training + (record,), re_optimize=re_optimize,
                           seed=seed), True


def _length_scale_key(kind: str, k: int) -> str:
    if kind == "mean":
        return f"mu_{FACTOR_NAMES[k]}"
    i, j = PAIR_INDICES[k]
    return f"rho_{FACTOR_NAMES[i]}_{FACTOR_NAMES[j]}"


def save_vector_gp(vgp: VectorGP, path, config: dict | None = None) -> None:
    scales = {_length_scale_key("mean", k): gp.length_scales.tolist()
              for k, gp in enumerate(vgp.mean_gps)}
    scales.update({_length_scale_key("corr", k): gp.length_scales.tolist()
                   for k, gp in enumerate(vgp.corr_gps)})
    payload = {
        "schema": SCHEMA_VERSION,
        "records": [{"c": _coeff_vector(r.c).tolist(), "mu": r.mu.tolist(),
                     "sigma_mat": r.sigma_mat.tolist()} for r in vgp.training],
        "length_scales": scales,
        "config": config if config is not None else
        {"min_distance": MIN_DISTANCE},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_vector_gp(path) -> VectorGP:
    with open(path) as fh:
        raw = json.load(fh)
    if raw.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported GP state schema: {raw.get('schema')!r}")
    records = tuple(
        TrainingRecord(c=GeometryCoefficients(c=np.array(r["c"], dtype=float)),
                       mu=np.array(r["mu"], dtype=float),
                       sigma_mat=np.array(r["sigma_mat"], dtype=float))
        for r in raw["records"])
    vgp = train_vector_gp(records, re_optimize=False)
    scales = raw["length_scales"]
    mean_gps = tuple(replace(gp, length_scales=np.array(
        scales[_length_scale_key("mean", k)], dtype=float))
        for k, gp in enumerate(vgp.mean_gps))
    corr_gps = tuple(replace(gp, length_scales=np.array(
        scales[_length_scale_key("corr", k)], dtype=float))
        for k, gp in enumerate(vgp.corr_gps))
    return VectorGP(mean_gps=mean_gps, corr_gps=corr_gps, training=records)
