"""Stress-pressure relations of the one-fiber family and their linearization.

The generalized model uses f(v) = 2*alpha + 3*beta*v with v = V/Vw; the
classical cylindrical-shell model is the special case (alpha=1/2, beta=1) and
the rotationally symmetric thick-wall model is the nonlinear
f_rsym(v) = 3/ln(1 + 1/v). ``taylor_coefficients`` returns the tangent-line
coefficients (alpha_star, beta_star) of f_rsym at an expansion point, written
as f(v) ~ alpha_star + beta_star*v.
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .kernels import KPA_TO_MMHG
from .parameters import CorrectionFactors, ROMParameters, CardiacState


def f_generalized(v_ratio, alpha: float, beta: float):
    """Stress-pressure ratio 2*alpha + 3*beta*v for v = V/Vw >= 0."""
    v = np.asarray(v_ratio, dtype=float)
    if np.any(v < 0):
        raise DomainError("volume ratio must be nonnegative")
    out = 2.0 * alpha + 3.0 * beta * v
    return float(out) if np.isscalar(v_ratio) else out


def f_cylindrical(v_ratio):
    """Empirical cylindrical-shell ratio 1 + 3*v."""
    return f_generalized(v_ratio, alpha=0.5, beta=1.0)


def f_rsym(v_ratio):
    """Rotationally symmetric thick-wall ratio 3/ln(1 + 1/v), v > 0."""
    v = np.asarray(v_ratio, dtype=float)
    if np.any(v <= 0):
        raise DomainError("f_rsym requires a strictly positive volume ratio")
    out = 3.0 / np.log1p(1.0 / v)
    return float(out) if np.isscalar(v_ratio) else out


def taylor_coefficients(eta: float) -> tuple[float, float]:
    """Tangent-line coefficients of f_rsym at eta.

    beta_star = f_rsym'(eta) and alpha_star = f_rsym(eta) - eta*beta_star, so
    alpha_star + beta_star*v matches f_rsym in value and slope at v = eta.
    log1p keeps the large-eta limits (3/2, 3) accurate to ~1e-10 even at
    eta = 1e6, where the direct log would lose the cancellation.
    """
    if eta <= 0:
        raise DomainError("expansion point must be positive")
    log_term = np.log1p(1.0 / eta)
    beta_star = 3.0 / (log_term * log_term * eta * (eta + 1.0))
    alpha_star = 3.0 / log_term - eta * beta_star
    return float(alpha_star), float(beta_star)


def linearization_error_scan(lo: float = 0.15, hi: float = 0.70,
                             eta: float = 0.345, n: int = 4001) -> dict:
    """Max relative deviation from f_rsym over [lo, hi] of (a) the empirical
    cylindrical model and (b) the tangent line at eta. Returns the maxima and
    their locations."""
    v = np.linspace(lo, hi, n)
    ref = f_rsym(v)
    emp = f_cylindrical(v)
    a_star, b_star = taylor_coefficients(eta)
    tan = a_star + b_star * v
    err_emp = np.abs(emp - ref) / ref
    err_tan = np.abs(tan - ref) / ref
    return {
        "empirical_max": float(err_emp.max()),
        "empirical_argmax": float(v[err_emp.argmax()]),
        "tangent_max": float(err_tan.max()),
        "tangent_argmax": float(v[err_tan.argmax()]),
        "eta": eta,
    }


def fiber_strain(V, V0: float, Vw: float, alpha: float, beta: float):
    """Logarithmic fiber strain (1/3beta)*ln[f(V/Vw)/f(V0/Vw)]."""
    num = 2.0 * alpha + 3.0 * beta * (np.asarray(V, dtype=float) / Vw)
    den = 2.0 * alpha + 3.0 * beta * (V0 / Vw)
    if np.any(num <= 0) or den <= 0:
        raise DomainError("stress-pressure ratio must stay positive for the "
                          "fiber-strain logarithm")
    out = np.log(num / den) / (3.0 * beta)
    return float(out) if np.isscalar(V) else out


def sarcomere_length(eps_fiber, ls0: float):
    """ls = ls0 * exp(eps_fiber)."""
    out = ls0 * np.exp(np.asarray(eps_fiber, dtype=float))
    return float(out) if np.isscalar(eps_fiber) else out


def passive_fiber_stress(ls, ls0: float, Tp0: float, cp: float):
    """Piecewise-exponential passive stress, zero at and below slack length."""
    ls_arr = np.asarray(ls, dtype=float)
    # extreme MCMC proposals can overflow the exponential; inf is the right
    # answer there and the simulation guards reject it downstream
    with np.errstate(over="ignore"):
        out = np.where(ls_arr > ls0,
                       Tp0 * (np.exp(cp * (ls_arr - ls0)) - 1.0), 0.0)
    return float(out) if np.isscalar(ls) else out


def f_iso(lc, lc0: float, T0: float, al: float):
    """Isometric stress factor T0*tanh^2(al*(lc - lc0)), zero below lc0."""
    lc_arr = np.asarray(lc, dtype=float)
    t = np.tanh(al * (lc_arr - lc0))
    out = np.where(lc_arr >= lc0, T0 * t * t, 0.0)
    return float(out) if np.isscalar(lc) else out


def f_twitch(ta, ls, taur: float, taud: float, b: float, ld: float):
    """Twitch shape in [0, 1]; support is [0, t_max] with t_max = b*(ls - ld).

    A degenerate twitch (t_max <= 0, possible for extreme parameter draws)
    returns 0 everywhere rather than raising.
    """
    ta_arr = np.asarray(ta, dtype=float)
    t_max = b * (np.asarray(ls, dtype=float) - ld)
    rise = np.tanh(np.maximum(ta_arr, 0.0) / taur) ** 2
    decay = np.tanh(np.maximum(t_max - ta_arr, 0.0) / taud) ** 2
    inside = (ta_arr >= 0.0) & (ta_arr <= t_max) & (t_max > 0.0)
    out = np.where(inside, rise * decay, 0.0)
    return float(out) if (np.isscalar(ta) and np.isscalar(ls)) else out


def active_fiber_stress(ls, lc, ta, params: ROMParameters):
    """f_iso * f_twitch * Ea * (ls - lc); zero before activation (ta < 0)."""
    iso = f_iso(lc, params.lc0, params.T0, params.al)
    twitch = f_twitch(ta, ls, params.taur, params.taud, params.b, params.ld)
    out = iso * twitch * params.Ea * (np.asarray(ls, dtype=float) - np.asarray(lc, dtype=float))
    return float(out) if np.isscalar(ls) else out


def total_fiber_stress(state: CardiacState, params: ROMParameters,
                       factors: CorrectionFactors) -> float:
    """tau_fiber = (ls/ls0)*(T_pas + T_act) at the given state (kPa).

    The state's t is cycle-local; activation is at params.tact. gamma and lam
    scale the passive pair (Tp0, cp).
    """
    eps = fiber_strain(state.V, params.V0, params.Vw, factors.alpha, factors.beta)
    ls = sarcomere_length(eps, params.ls0)
    t_pas = passive_fiber_stress(ls, params.ls0,
                                 factors.gamma * params.Tp0,
                                 factors.lam * params.cp)
    t_act = active_fiber_stress(ls, state.lc, state.t - params.tact, params)
    return float((ls / params.ls0) * (t_pas + t_act))


def cavity_pressure(state: CardiacState, params: ROMParameters,
                    factors: CorrectionFactors) -> float:
    """Mechanical equilibrium p = tau_fiber/f, converted kPa -> mmHg."""
    f = f_generalized(state.V / params.Vw, factors.alpha, factors.beta)
    if f <= 0:
        raise DomainError("stress-pressure ratio f must be positive")
    return KPA_TO_MMHG * total_fiber_stress(state, params, factors) / f
