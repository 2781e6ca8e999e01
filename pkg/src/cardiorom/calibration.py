"""Bayesian calibration of the correction factors against a p-V trace.

The likelihood compares a measured steady-state cycle with the model's,
under Gaussian noise that is exponentially correlated in time and, for the
volume channel, phase-weighted: tighter during the isovolumetric intervals
where the volume signal is nearly flat. Sampling is adaptive
Metropolis-Hastings with a Haario-style proposal and scale tuning toward a
0.234 acceptance ratio, followed by a fixed-proposal phase from which the
posterior moments are estimated.

Pressure noise prints as "2.5 [ml]" in the source material for the fixed
noise levels; it is treated as mmHg here.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SimulationFailed, StuckChain, ValidationError
from .gp import cholesky_with_jitter
from .onefiber.parameters import FACTOR_NAMES, CorrectionFactors, ROMParameters
from .onefiber.simulate import PVTrace, run_simulation


@dataclass(frozen=True)
class NoiseModel:
    """Per-step noise levels and correlation times of the two channels."""

    sigma_p: np.ndarray   # (n,) mmHg
    sigma_V: np.ndarray   # (n,) ml
    tau_p: float          # ms
    tau_V: float          # ms
    dt: float             # ms

    def __post_init__(self):
        sp = np.asarray(self.sigma_p, dtype=float)
        sv = np.asarray(self.sigma_V, dtype=float)
        if sp.shape != sv.shape or sp.ndim != 1:
            raise ValidationError("sigma_p and sigma_V must be equal-length "
                                  "vectors")
        if np.any(sp <= 0) or np.any(sv <= 0):
            raise ValidationError("noise levels must be positive")
        if self.tau_p <= 0 or self.tau_V <= 0 or self.dt <= 0:
            raise ValidationError("correlation times and dt must be positive")
        object.__setattr__(self, "sigma_p", sp)
        object.__setattr__(self, "sigma_V", sv)

    @property
    def n(self) -> int:
        return len(self.sigma_p)


def _correlated_block(sigma: np.ndarray, tau: float, dt: float) -> np.ndarray:
    n = len(sigma)
    lag = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    return np.outer(sigma, sigma) * np.exp(-lag * dt / tau)


class NoiseCovariance:
    """Block-diagonal [pp, VV] covariance held as per-block Cholesky factors."""

    def __init__(self, model: NoiseModel):
        self.model = model
        self._L_p = cholesky_with_jitter(
            _correlated_block(model.sigma_p, model.tau_p, model.dt))
        self._L_V = cholesky_with_jitter(
            _correlated_block(model.sigma_V, model.tau_V, model.dt))
        self.log_det = 2.0 * (np.sum(np.log(np.diag(self._L_p)))
                              + np.sum(np.log(np.diag(self._L_V))))

    @property
    def n(self) -> int:
        return self.model.n

    def quad_form(self, r_p: np.ndarray, r_V: np.ndarray) -> float:
        """r^T Sigma^-1 r for the stacked residual."""
        z_p = solve_triangular(self._L_p, r_p, lower=True)
        z_V = solve_triangular(self._L_V, r_V, lower=True)
        return float(z_p @ z_p + z_V @ z_V)

    def dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros((2 * n, 2 * n))
        out[:n, :n] = _correlated_block(self.model.sigma_p, self.model.tau_p,
                                        self.model.dt)
        out[n:, n:] = _correlated_block(self.model.sigma_V, self.model.tau_V,
                                        self.model.dt)
        return out

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """One correlated noise draw per channel."""
        return (self._L_p @ rng.standard_normal(self.n),
                self._L_V @ rng.standard_normal(self.n))


def build_noise_covariance(model: NoiseModel) -> NoiseCovariance:
    return NoiseCovariance(model)


def isovolumetric_mask(q_art: np.ndarray, q_ven: np.ndarray) -> np.ndarray:
    """True where both valves are closed (no flow either way)."""
    return (np.asarray(q_art) <= 0.0) & (np.asarray(q_ven) <= 0.0)


def _true_runs_periodic(mask: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous True runs as (start, stop) index pairs, stop exclusive;
    a run wrapping the end joins the one starting at 0."""
    n = len(mask)
    if mask.all():
        return [(0, n)]
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.diff(padded)
    starts = list(np.where(edges == 1)[0])
    stops = list(np.where(edges == -1)[0])
    runs = list(zip(starts, stops))
    if mask[0] and mask[-1]:
        first = runs.pop(0)
        last = runs.pop()
        runs.append((last[0], first[1] + n))
    return runs


def phase_weighted_sigma(trace: PVTrace, valve_states: np.ndarray,
                         sigma_min: float, sigma_max: float,
                         transition_width: float = 10.0) -> np.ndarray:
    """Per-step volume noise, low inside isovolumetric intervals.

    valve_states is True where both valves are closed. Each closed interval
    contributes a tanh bump of the given width (ms); the blend w is their
    pointwise maximum, and sigma = sigma_max + (sigma_min - sigma_max) * w.
    """
    if sigma_min >= sigma_max:
        raise ValidationError("need sigma_min < sigma_max")
    mask = np.asarray(valve_states, dtype=bool)
    if len(mask) != trace.n:
        raise ValidationError("valve states must align with the trace")
    t = trace.t
    period = trace.n * trace.dt
    w = np.zeros(trace.n)
    for start, stop in _true_runs_periodic(mask):
        t_a = start * trace.dt
        t_b = (stop - 1) * trace.dt
        for shift in (-period, 0.0, period):
            bump = 0.5 * (np.tanh((t - t_a + shift) / transition_width)
                          + np.tanh((t_b - t - shift) / transition_width))
            w = np.maximum(w, bump)
    return sigma_max + (sigma_min - sigma_max) * np.clip(w, 0.0, 1.0)


@dataclass(frozen=True)
class ROMContext:
    """Everything needed to produce the model's steady-state cycle."""

    params: ROMParameters
    n_cycles: int = 6
    dt: float = 2.0


def rom_trace(ctx: ROMContext, factors: CorrectionFactors) -> PVTrace:
    return run_simulation(ctx.params, factors, n_cycles=ctx.n_cycles,
                          dt=ctx.dt).trace(-1)


def resample_cycle(trace: PVTrace, dt: float, n: int) -> PVTrace:
    """Periodic linear interpolation onto a uniform n-point grid of step dt."""
    if trace.n == n and math.isclose(trace.dt, dt, rel_tol=1e-12):
        return trace
    t_new = np.arange(n) * dt
    period = trace.n * trace.dt
    t_old = np.concatenate([trace.t, [period]])
    p = np.concatenate([trace.p, [trace.p[0]]])
    v = np.concatenate([trace.V, [trace.V[0]]])
    return PVTrace(dt=dt, p=np.interp(t_new % period, t_old, p),
                   V=np.interp(t_new % period, t_old, v),
                   cycle_index=trace.cycle_index)


def log_likelihood(theta_corr, data: PVTrace, rom_context: ROMContext,
                   noise) -> float:
    """Gaussian log-likelihood of the data cycle under the model at theta.

    Raises SimulationFailed when the model cannot be evaluated at theta; the
    sampler treats that as log-likelihood -inf.
    """
    if isinstance(noise, NoiseModel):
        noise = NoiseCovariance(noise)
    factors = theta_corr if isinstance(theta_corr, CorrectionFactors) \
        else CorrectionFactors.from_array(theta_corr)
    try:
        model = rom_trace(rom_context, factors)
    except SimulationFailed:
        raise
    except Exception as exc:
        raise SimulationFailed(f"model evaluation failed at "
                               f"{factors.as_array()}: {exc}") from exc
    n = noise.n
    d = resample_cycle(data, noise.model.dt, n)
    m = resample_cycle(model, noise.model.dt, n)
    return float(-0.5 * noise.quad_form(d.p - m.p, d.V - m.V)
                 - 0.5 * noise.log_det - n * math.log(2.0 * math.pi))


@dataclass(frozen=True)
class Prior:
    """Independent Gaussian prior on the four factors."""

    mu: np.ndarray = field(default_factory=lambda: np.ones(4))
    sigma: np.ndarray = field(default_factory=lambda: np.full(4, 0.1))

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if np.any(self.sigma <= 0):
            raise ValidationError("prior standard deviations must be positive")

    def logpdf(self, theta: np.ndarray) -> float:
        z = (np.asarray(theta, dtype=float) - self.mu) / self.sigma
        return float(-0.5 * z @ z - np.sum(np.log(self.sigma))
                     - 0.5 * len(self.mu) * math.log(2.0 * math.pi))


@dataclass(frozen=True)
class ChainConfig:
    n_adaptive: int = 25_000
    reset_every: int = 25_000
    n_regular: int = 25_000
    n_burnin: int = 5_000
    target_acceptance: float = 0.234
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.n_burnin < self.n_regular):
            raise ValidationError("need n_burnin < n_regular")
        if not (0 < self.target_acceptance < 1):
            raise ValidationError("target acceptance must be in (0, 1)")


@dataclass(frozen=True)
class ChainResult:
    samples: np.ndarray       # (n_regular - n_burnin, d)
    log_posts: np.ndarray     # aligned with samples
    acceptance_rate: float    # over the fixed-proposal phase
    proposal_cov: np.ndarray
    seed: int


class _Welford:
    """Streaming mean/covariance of the adaptation segment."""

    def __init__(self, d: int):
        self.count = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros((d, d))

    def push(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, x - self.mean)

    def cov(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.count - 1)


def adaptive_metropolis(log_post, config: ChainConfig, init) -> ChainResult:
    """Adaptive phase tunes a Haario proposal; a fixed-proposal phase samples.

    The proposal is s * Cov(segment) + eps*I with the segment covariance
    restarted every reset_every steps and the global scale s nudged toward
    the target acceptance by stochastic approximation; s survives resets.
    """
    theta = np.asarray(init, dtype=float).copy()
    d = len(theta)
    rng = np.random.default_rng(config.seed)

    def posterior_or_neginf(x):
        try:
            return log_post(x)
        except (SimulationFailed, ValidationError, ValueError):
            return -np.inf

    lp = posterior_or_neginf(theta)
    if not np.isfinite(lp):
        raise ValidationError("log posterior not finite at the initial point")

    log_s = math.log(2.38 ** 2 / d)
    eps = 1e-12
    base_cov = 0.01 * np.eye(d)  # until the segment has enough samples
    welford = _Welford(d)
    accepted_adaptive = 0
    L_prop = np.linalg.cholesky(math.exp(log_s) * base_cov + eps * np.eye(d))
    for step in range(config.n_adaptive):
        if step > 0 and step % config.reset_every == 0:
            welford = _Welford(d)  # restart covariance estimation, keep s
        proposal = theta + L_prop @ rng.standard_normal(d)
        lp_new = posterior_or_neginf(proposal)
        accept = math.log(rng.uniform()) < lp_new - lp
        if accept:
            theta, lp = proposal, lp_new
            accepted_adaptive += 1
        welford.push(theta)
        # Robbins-Monro on log s toward the target ratio
        log_s += ((1.0 if accept else 0.0) - config.target_acceptance) \
            * (10.0 / (100.0 + step))
        # a young segment's covariance is noise; keep the previous mature
        # estimate until this one has something to say
        if welford.count >= max(2 * d, 100):
            base_cov = welford.cov()
        L_prop = np.linalg.cholesky(math.exp(log_s) * base_cov
                                    + eps * np.eye(d))
    if config.n_adaptive > 0 and \
            accepted_adaptive < 0.005 * config.n_adaptive:
        raise StuckChain(f"acceptance {accepted_adaptive}/"
                         f"{config.n_adaptive} during adaptation")

    proposal_cov = math.exp(log_s) * base_cov + eps * np.eye(d)
    L_prop = np.linalg.cholesky(proposal_cov)
    samples = np.empty((config.n_regular, d))
    log_posts = np.empty(config.n_regular)
    accepted = 0
    for step in range(config.n_regular):
        proposal = theta + L_prop @ rng.standard_normal(d)
        lp_new = posterior_or_neginf(proposal)
        if math.log(rng.uniform()) < lp_new - lp:
            theta, lp = proposal, lp_new
            accepted += 1
        samples[step] = theta
        log_posts[step] = lp
    return ChainResult(samples=samples[config.n_burnin:],
                       log_posts=log_posts[config.n_burnin:],
                       acceptance_rate=accepted / config.n_regular,
                       proposal_cov=proposal_cov, seed=config.seed)


@dataclass(frozen=True)
class PosteriorSummary:
    mu: np.ndarray
    sigma_mat: np.ndarray
    acceptance_rate: float
    rhat: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma_mat",
                           np.asarray(self.sigma_mat, dtype=float))
        if not np.allclose(self.sigma_mat, self.sigma_mat.T, atol=1e-10):
            raise ValidationError("posterior covariance must be symmetric")
        if not (0.0 < self.acceptance_rate < 1.0):
            raise ValidationError("acceptance rate must be in (0, 1)")


def split_rhat(samples: np.ndarray) -> np.ndarray:
    """Split-chain potential-scale-reduction factor per component."""
    n = len(samples) // 2
    halves = np.stack([samples[:n], samples[n:2 * n]])
    means = halves.mean(axis=1)
    variances = halves.var(axis=1, ddof=1)
    w = variances.mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return np.sqrt(var_plus / w)


def posterior_moments(chain, compute_rhat: bool = False) -> PosteriorSummary:
    """Sample mean and unbiased covariance of the post-burn-in chain."""
    if isinstance(chain, ChainResult):
        samples = chain.samples
        acceptance = chain.acceptance_rate
    else:
        samples = np.asarray(chain, dtype=float)
        acceptance = 0.5  # unknown; placeholder inside the open interval
    if len(samples) == 0:
        raise ValidationError("empty chain")
    mu = samples.mean(axis=0)
    centered = samples - mu
    sigma = centered.T @ centered / max(len(samples) - 1, 1)
    rhat = split_rhat(samples) if compute_rhat and len(samples) >= 4 else None
    return PosteriorSummary(mu=mu, sigma_mat=sigma,
                            acceptance_rate=acceptance, rhat=rhat)


@dataclass(frozen=True)
class NoiseSpec:
    """Choice of noise levels: fixed values or hemodynamic-landmark scaling."""

    kind: str = "fixed"              # "fixed" | "scaled"
    sigma_p: float = 2.5             # mmHg (fixed)
    sigma_V_min: float = 0.25        # ml (fixed)
    sigma_V_max: float = 1.15        # ml (fixed)
    p_fraction: float = 0.05         # of p_max (scaled)
    v_min_fraction: float = 0.017    # of stroke volume (scaled)
    v_max_fraction: float = 0.033    # of stroke volume (scaled)
    transition_width: float = 10.0   # ms
    tau: float | None = None         # default t_cycle - dt

    def __post_init__(self):
        if self.kind not in ("fixed", "scaled"):
            raise ValidationError("noise kind must be 'fixed' or 'scaled'")

    def levels(self, data: PVTrace) -> tuple[float, float, float]:
        """(sigma_p, sigma_V_min, sigma_V_max) for the given data cycle."""
        if self.kind == "fixed":
            return self.sigma_p, self.sigma_V_min, self.sigma_V_max
        stroke = float(data.V.max() - data.V.min())
        p_max = float(data.p.max())
        return (self.p_fraction * p_max, self.v_min_fraction * stroke,
                self.v_max_fraction * stroke)


def build_noise_model(data: PVTrace, ctx: ROMContext, spec: NoiseSpec,
                      reference_factors: CorrectionFactors) -> NoiseModel:
    """Noise model on the context grid; valve phases come from a reference
    simulation since measured traces carry no valve annotations."""
    res = run_simulation(ctx.params, reference_factors, n_cycles=ctx.n_cycles,
                         dt=ctx.dt)
    q_art, q_ven = res.valve_flows(-1)
    mask = isovolumetric_mask(q_art, q_ven)
    ref_trace = res.trace(-1)
    sigma_p, sv_min, sv_max = spec.levels(data)
    sigma_v = phase_weighted_sigma(ref_trace, mask, sv_min, sv_max,
                                   spec.transition_width)
    tau = spec.tau if spec.tau is not None else ctx.params.tcycle - ctx.dt
    return NoiseModel(sigma_p=np.full(ref_trace.n, sigma_p), sigma_V=sigma_v,
                      tau_p=tau, tau_V=tau, dt=ctx.dt)


def calibrate(data: PVTrace, rom_params: ROMParameters,
              noise_spec: NoiseSpec = NoiseSpec(),
              prior: Prior = Prior(),
              config: ChainConfig = ChainConfig(),
              n_cycles: int = 6,
              prior_only: bool = False,
              compute_rhat: bool = False,
              chain_out=None) -> PosteriorSummary:
    """Posterior moments of the correction factors for one data cycle."""
    ctx = ROMContext(params=rom_params, n_cycles=n_cycles, dt=data.dt)
    if prior_only:
        def log_post(theta):
            return prior.logpdf(theta)
    else:
        noise = NoiseCovariance(build_noise_model(
            data, ctx, noise_spec,
            CorrectionFactors.from_array(prior.mu)))

        def log_post(theta):
            return prior.logpdf(theta) + log_likelihood(theta, data, ctx,
                                                        noise)

    result = adaptive_metropolis(log_post, config, init=prior.mu)
    if chain_out is not None:
        write_chain_csv(result, chain_out)
    return posterior_moments(result, compute_rhat=compute_rhat)


def write_chain_csv(result: ChainResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + list(FACTOR_NAMES) + ["logpost"])
        for i, (row, lp) in enumerate(zip(result.samples, result.log_posts)):
            writer.writerow([i] + [repr(float(x)) for x in row]
                            + [repr(float(lp))])


def write_calibration_report(summary: PosteriorSummary, config: ChainConfig,
                             noise_spec: NoiseSpec, path) -> None:
    payload = {
        "mu": summary.mu.tolist(),
        "sigma_mat": summary.sigma_mat.tolist(),
        "acceptance": summary.acceptance_rate,
        "n_samples": config.n_regular - config.n_burnin,
        "seed": config.seed,
        "noise_config": {
            "kind": noise_spec.kind,
            "sigma_p": noise_spec.sigma_p,
            "sigma_V_min": noise_spec.sigma_V_min,
            "sigma_V_max": noise_spec.sigma_V_max,
            "p_fraction": noise_spec.p_fraction,
            "v_min_fraction": noise_spec.v_min_fraction,
            "v_max_fraction": noise_spec.v_max_fraction,
            "transition_width": noise_spec.transition_width,
            "tau": noise_spec.tau,
        },
    }
    if summary.rhat is not None:
        payload["rhat"] = summary.rhat.tolist()
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
