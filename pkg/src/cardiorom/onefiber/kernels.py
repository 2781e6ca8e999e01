"""Hot numerical kernels for the one-fiber cardiac cycle.

Everything in this module operates on plain floats and flat float64 arrays so
that the functions can be compiled with numba's ``@njit``. When numba is not
installed, or when the environment variable ``CARDIOROM_NUMBA`` is set to
``0``/``false``/``off``, the same definitions run as ordinary Python on numpy
scalars. ``USING_NUMBA`` reports which path is active; the benchmark script
under ``benchmarks/`` compares the two.

Parameter vectors are laid out according to the ``I_*`` index constants below
(see ``ROMParameters.as_vector``). Pressures are mmHg, volumes ml, lengths um,
times ms; stresses are kPa internally and converted once at the mechanical
equilibrium p = tau/f.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_enabled() -> bool:
    flag = os.environ.get("CARDIOROM_NUMBA", "").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USING_NUMBA = _numba_enabled()

if USING_NUMBA:
    from numba import njit
else:

    def njit(*args, **kwargs):  # noqa: ARG001 - mirror numba's signature
        """Identity decorator standing in for numba.njit."""
        if args and callable(args[0]):
            return args[0]

        def decorate(func):
            return func

        return decorate


KPA_TO_MMHG = 7.5006

# Parameter-vector layout; keep in sync with ROMParameters.as_vector().
I_V0 = 0
I_VW = 1
I_LS0 = 2
I_LC0 = 3
I_TP0 = 4
I_CP = 5
I_T0 = 6
I_AL = 7
I_EA = 8
I_V0SH = 9
I_TAUR = 10
I_TAUD = 11
I_B = 12
I_LD = 13
I_TCYCLE = 14
I_TACT = 15
I_CART = 16
I_CVEN = 17
I_RART = 18
I_RVEN = 19
I_RPER = 20
I_VART0 = 21
I_VVEN0 = 22
N_PAR = 23

# Status codes returned by the stepping kernels.
STATUS_OK = 0
STATUS_DOMAIN = 1
STATUS_NO_BRACKET = 2
STATUS_NO_CONVERGENCE = 3

# Volume floor: the strain log stays defined for V >= 0 (alpha, beta > 0), but
# negative cavity volumes are meaningless, so the solver never probes below.
_V_FLOOR = 1e-9


@njit(cache=True)
def sarcomere_um(V, par, alpha, beta):
    """Sarcomere length (um) at cavity volume V; NaN outside the log domain."""
    f = 2.0 * alpha + 3.0 * beta * (V / par[I_VW])
    f0 = 2.0 * alpha + 3.0 * beta * (par[I_V0] / par[I_VW])
    if f <= 0.0 or f0 <= 0.0:
        return np.nan
    eps = np.log(f / f0) / (3.0 * beta)
    return par[I_LS0] * np.exp(eps)


@njit(cache=True)
def pressure_mmhg(V, lc, ta, par, alpha, beta, gamma, lam):
    """Cavity pressure (mmHg) from mechanical equilibrium p = tau_fiber / f.

    ta is the time since activation (negative before activation). gamma and
    lam scale the passive pair (Tp0, cp); alpha and beta shape f. Returns NaN
    when the fiber-strain logarithm leaves its domain.
    """
    f = 2.0 * alpha + 3.0 * beta * (V / par[I_VW])
    f0 = 2.0 * alpha + 3.0 * beta * (par[I_V0] / par[I_VW])
    if f <= 0.0 or f0 <= 0.0:
        return np.nan
    eps = np.log(f / f0) / (3.0 * beta)
    ls = par[I_LS0] * np.exp(eps)

    t_pas = 0.0
    if ls > par[I_LS0]:
        t_pas = gamma * par[I_TP0] * (np.exp(lam * par[I_CP] * (ls - par[I_LS0])) - 1.0)

    t_act = 0.0
    if ta >= 0.0:
        t_max = par[I_B] * (ls - par[I_LD])
        if t_max > 0.0 and ta <= t_max:
            f_iso = 0.0
            if lc >= par[I_LC0]:
                th = np.tanh(par[I_AL] * (lc - par[I_LC0]))
                f_iso = par[I_T0] * th * th
            tr = np.tanh(ta / par[I_TAUR])
            td = np.tanh((t_max - ta) / par[I_TAUD])
            t_act = f_iso * tr * tr * td * td * par[I_EA] * (ls - lc)

    tau = (ls / par[I_LS0]) * (t_pas + t_act)
    return KPA_TO_MMHG * tau / f


@njit(cache=True)
def _volume_residual(Vn, V_prev, lc_next, ta_next, p_art, p_ven, dt, par,
                     alpha, beta, gamma, lam):
    # g(V) = V - V_prev - dt*(q_ven(V) - q_art(V)); arterial/venous pressures
    # are held at their previous-step values (semi-implicit splitting).
    p = pressure_mmhg(Vn, lc_next, ta_next, par, alpha, beta, gamma, lam)
    if np.isnan(p):
        return np.nan
    q_ven = (p_ven - p) / par[I_RVEN] if p_ven > p else 0.0
    q_art = (p - p_art) / par[I_RART] if p > p_art else 0.0
    return Vn - V_prev - dt * (q_ven - q_art)


@njit(cache=True)
def solve_volume(V_prev, lc_next, ta_next, p_art, p_ven, dt, par,
                 alpha, beta, gamma, lam, tol, max_iter):
    """Solve g(V)=0 for the next cavity volume.

    Newton iterations with a numeric derivative, safeguarded by an expanding
    bracket and bisection; |g| <= tol (ml) terminates. Returns
    (V_next, status).
    """
    g0 = _volume_residual(V_prev, V_prev, lc_next, ta_next, p_art, p_ven, dt, par,
                          alpha, beta, gamma, lam)
    if np.isnan(g0):
        return V_prev, STATUS_DOMAIN
    if abs(g0) <= tol:
        # Both valves closed: V is already the root (isovolumetric phase).
        return V_prev, STATUS_OK

    # Bracket the root around V_prev by geometric expansion of one side.
    lo = V_prev
    hi = V_prev
    if g0 > 0.0:
        step = 0.5
        ok = False
        for _ in range(80):
            lo = V_prev - step
            if lo < _V_FLOOR:
                lo = _V_FLOOR
            glo = _volume_residual(lo, V_prev, lc_next, ta_next, p_art, p_ven, dt, par,
                                   alpha, beta, gamma, lam)
            if np.isnan(glo):
                return V_prev, STATUS_DOMAIN
            if glo <= 0.0:
                ok = True
                break
            hi = lo
            if lo == _V_FLOOR:
                break
            step *= 2.0
        if not ok:
            return V_prev, STATUS_NO_BRACKET
    else:
        step = 0.5
        ok = False
        for _ in range(80):
            hi = V_prev + step
            ghi = _volume_residual(hi, V_prev, lc_next, ta_next, p_art, p_ven, dt, par,
                                   alpha, beta, gamma, lam)
            if np.isnan(ghi):
                return V_prev, STATUS_DOMAIN
            if ghi >= 0.0:
                ok = True
                break
            lo = hi
            step *= 2.0
        if not ok:
            return V_prev, STATUS_NO_BRACKET

    # Safeguarded Newton: every iterate stays inside [lo, hi]; rejected steps
    # fall back to bisection, so convergence is guaranteed.
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        gx = _volume_residual(x, V_prev, lc_next, ta_next, p_art, p_ven, dt, par,
                              alpha, beta, gamma, lam)
        if np.isnan(gx):
            return V_prev, STATUS_DOMAIN
        if abs(gx) <= tol:
            return x, STATUS_OK
        if gx > 0.0:
            hi = x
        else:
            lo = x
        h = 1e-6 * (1.0 + abs(x))
        gp = _volume_residual(x + h, V_prev, lc_next, ta_next, p_art, p_ven, dt, par,
                              alpha, beta, gamma, lam)
        gm = _volume_residual(x - h, V_prev, lc_next, ta_next, p_art, p_ven, dt, par,
                              alpha, beta, gamma, lam)
        if np.isnan(gp) or np.isnan(gm):
            x = 0.5 * (lo + hi)
            continue
        d = (gp - gm) / (2.0 * h)
        if d > 0.0:
            xn = x - gx / d
        else:
            xn = 0.5 * (lo + hi)
        if xn <= lo or xn >= hi:
            xn = 0.5 * (lo + hi)
        x = xn
    return x, STATUS_NO_CONVERGENCE


@njit(cache=True)
def run_cycles(par, theta, V_init, lc_init, vart_init, vven_init,
               n_cycles, steps, dt, tol, max_iter):
    """Advance the coupled one-fiber + circulation system.

    Records the state at every step start: columns of the returned (8, N)
    array are t, p, V, lc, Vart, Vven, q_art, q_ven with N = n_cycles*steps.
    Also returns (status, fail_index); on failure the arrays are valid up to
    (excluding) fail_index.
    """
    N = n_cycles * steps
    out = np.empty((8, N))
    alpha = theta[0]
    beta = theta[1]
    gamma = theta[2]
    lam = theta[3]
    V = V_init
    lc = lc_init
    vart = vart_init
    vven = vven_init
    for i in range(N):
        k = i % steps
        t_loc = k * dt
        ta = t_loc - par[I_TACT]
        p = pressure_mmhg(V, lc, ta, par, alpha, beta, gamma, lam)
        if np.isnan(p):
            return out, STATUS_DOMAIN, i
        p_art = (vart - par[I_VART0]) / par[I_CART]
        p_ven = (vven - par[I_VVEN0]) / par[I_CVEN]
        q_art = (p - p_art) / par[I_RART] if p > p_art else 0.0
        q_ven = (p_ven - p) / par[I_RVEN] if p_ven > p else 0.0
        out[0, i] = i * dt
        out[1, i] = p
        out[2, i] = V
        out[3, i] = lc
        out[4, i] = vart
        out[5, i] = vven
        out[6, i] = q_art
        out[7, i] = q_ven
        if i == N - 1:
            break

        # Contractile length: slaved to ls until activation, forward Euler after.
        t_next = ((i + 1) % steps) * dt
        ta_next = t_next - par[I_TACT]
        ls_now = sarcomere_um(V, par, alpha, beta)
        if np.isnan(ls_now):
            return out, STATUS_DOMAIN, i
        if t_next <= par[I_TACT]:
            lc_next = ls_now
        else:
            lc_next = lc + dt * (par[I_EA] * (ls_now - lc) - 1.0) * par[I_V0SH]

        V_next, st = solve_volume(V, lc_next, ta_next, p_art, p_ven, dt, par,
                                  alpha, beta, gamma, lam, tol, max_iter)
        if st != STATUS_OK:
            return out, st, i
        p_next = pressure_mmhg(V_next, lc_next, ta_next, par, alpha, beta, gamma, lam)
        # The same flow values update all three compartments, so the total
        # blood volume is conserved identically.
        q_art_s = (p_next - p_art) / par[I_RART] if p_next > p_art else 0.0
        q_ven_s = (p_ven - p_next) / par[I_RVEN] if p_ven > p_next else 0.0
        q_per = (p_art - p_ven) / par[I_RPER]
        vart += dt * (q_art_s - q_per)
        vven += dt * (q_per - q_ven_s)
        V = V_next
        lc = lc_next
    return out, STATUS_OK, -1
