"""Multi-cycle simulation of the one-fiber model with a closed circulation.

Time stepping is semi-implicit: the contractile length advances by forward
Euler (slaved to the sarcomere length before activation), then a scalar
nonlinear solve couples mechanical equilibrium and the valve flows implicitly
in the new cavity volume. Arterial and venous pressures enter that solve at
their previous-step values, and one consistent set of flow values updates all
three compartments, which conserves total blood volume to machine precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from ..errors import (DomainError, NoBracket, NonConvergence, ValidationError)
from . import kernels, relations
from .parameters import CardiacState, CorrectionFactors, ROMParameters


@dataclass(frozen=True)
class PVTrace:
    """One cardiac cycle of sampled pressure (mmHg) and volume (ml).

    Samples sit at t = k*dt, k = 0..n-1, with n*dt equal to the cycle
    duration; the concatenation [p..., V...] is the 2n quantity-of-interest
    vector used by calibration.
    """

    dt: float
    p: np.ndarray
    V: np.ndarray
    cycle_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float))
        if self.p.shape != self.V.shape or self.p.ndim != 1 or self.p.size == 0:
            raise ValidationError("pressure and volume arrays must be equal-length 1D")
        self.p.setflags(write=False)
        self.V.setflags(write=False)

    @property
    def n(self) -> int:
        return self.p.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    def concat(self) -> np.ndarray:
        """Quantity-of-interest vector [p..., V...] of length 2n."""
        return np.concatenate([self.p, self.V])


@dataclass(frozen=True)
class HemodynamicSummary:
    V_ED: float      # end-diastolic volume [ml]
    V_ES: float      # end-systolic volume [ml]
    p_max: float     # peak cavity pressure [mmHg]
    EF: float        # ejection fraction
    V_stroke: float  # stroke volume [ml]


def summarize(trace: PVTrace) -> HemodynamicSummary:
    """Hemodynamic landmarks of one cycle (V_ED = max V, V_ES = min V)."""
    v_ed = float(trace.V.max())
    v_es = float(trace.V.min())
    return HemodynamicSummary(V_ED=v_ed, V_ES=v_es, p_max=float(trace.p.max()),
                              EF=(v_ed - v_es) / v_ed, V_stroke=v_ed - v_es)


@dataclass(frozen=True)
class SimulationResult:
    """Full state history of a multi-cycle run (arrays indexed by step)."""

    params: ROMParameters
    factors: CorrectionFactors
    dt: float
    steps_per_cycle: int
    t: np.ndarray
    p: np.ndarray
    V: np.ndarray
    lc: np.ndarray
    Vart: np.ndarray
    Vven: np.ndarray
    q_art: np.ndarray
    q_ven: np.ndarray

    @property
    def n_cycles(self) -> int:
        return self.t.size // self.steps_per_cycle

    def _sl(self, cycle: int) -> slice:
        n = self.steps_per_cycle
        cycle = range(self.n_cycles)[cycle]  # normalize negatives
        return slice(cycle * n, (cycle + 1) * n)

    def trace(self, cycle: int) -> PVTrace:
        s = self._sl(cycle)
        idx = range(self.n_cycles)[cycle]
        return PVTrace(dt=self.dt, p=self.p[s].copy(), V=self.V[s].copy(),
                       cycle_index=idx)

    def traces(self) -> list[PVTrace]:
        return [self.trace(i) for i in range(self.n_cycles)]

    def valve_flows(self, cycle: int) -> tuple[np.ndarray, np.ndarray]:
        s = self._sl(cycle)
        return self.q_art[s].copy(), self.q_ven[s].copy()

    def total_volume(self) -> np.ndarray:
        return self.V + self.Vart + self.Vven

    def conservation_error(self) -> float:
        """Max relative drift of the total blood volume."""
        tot = self.total_volume()
        return float(np.abs(tot - tot[0]).max() / tot[0])

    def steady_state_gap(self) -> float:
        """|V_ED(last) - V_ED(previous)| / V_stroke(last)."""
        if self.n_cycles < 2:
            raise ValidationError("need at least two cycles")
        last = summarize(self.trace(-1))
        prev = summarize(self.trace(-2))
        return abs(last.V_ED - prev.V_ED) / last.V_stroke

    def fiber_quantities(self, cycle: int) -> tuple[np.ndarray, np.ndarray]:
        """(strain, stress kPa) along one cycle, for the work identity."""
        s = self._sl(cycle)
        eps = relations.fiber_strain(self.V[s], self.params.V0, self.params.Vw,
                                     self.factors.alpha, self.factors.beta)
        ls = relations.sarcomere_length(eps, self.params.ls0)
        t_pas = relations.passive_fiber_stress(
            ls, self.params.ls0, self.factors.gamma * self.params.Tp0,
            self.factors.lam * self.params.cp)
        ta = np.arange(self.steps_per_cycle) * self.dt - self.params.tact
        t_act = relations.active_fiber_stress(ls, self.lc[s], ta, self.params)
        return eps, (ls / self.params.ls0) * (t_pas + t_act)


def _steps_per_cycle(tcycle: float, dt: float) -> int:
    if dt <= 0:
        raise ValidationError("dt must be positive")
    steps = round(tcycle / dt)
    if steps < 2 or abs(steps * dt - tcycle) > 1e-9 * tcycle:
        raise ValidationError(f"dt={dt} must divide the cycle time {tcycle}")
    return steps


_STATUS_MESSAGES = {
    kernels.STATUS_DOMAIN: "fiber-strain logarithm left its domain",
    kernels.STATUS_NO_BRACKET: "could not bracket the cavity-volume update",
    kernels.STATUS_NO_CONVERGENCE: "volume solve exhausted its iteration budget",
}


def run_simulation(params: ROMParameters, factors: CorrectionFactors,
                   n_cycles: int = 6, dt: float = 2.0,
                   init: CardiacState | None = None,
                   tol: float = 1e-10, max_iter: int = 200) -> SimulationResult:
    """Simulate n_cycles cardiac cycles and return the full state history."""
    if n_cycles < 1:
        raise ValidationError("n_cycles must be >= 1")
    steps = _steps_per_cycle(params.tcycle, dt)
    if init is None:
        init = init_end_diastole(params, factors, p_ED=12.0)
    par = params.as_vector()
    out, status, fail_idx = kernels.run_cycles(
        par, factors.as_array(), init.V, init.lc, init.Vart, init.Vven,
        n_cycles, steps, dt, tol, max_iter)
    if status != kernels.STATUS_OK:
        msg = f"{_STATUS_MESSAGES[status]} at step {fail_idx} (t={fail_idx * dt} ms)"
        if status == kernels.STATUS_DOMAIN:
            raise DomainError(msg)
        if status == kernels.STATUS_NO_BRACKET:
            raise NoBracket(msg)
        raise NonConvergence(msg)
    return SimulationResult(
        params=params, factors=factors, dt=dt, steps_per_cycle=steps,
        t=out[0], p=out[1], V=out[2], lc=out[3], Vart=out[4], Vven=out[5],
        q_art=out[6], q_ven=out[7])


def simulate(params: ROMParameters, factors: CorrectionFactors,
             n_cycles: int = 6, dt: float = 2.0,
             init: CardiacState | None = None) -> list[PVTrace]:
    """Per-cycle pressure-volume traces (init defaults to end-diastole at
    12 mmHg). See run_simulation for the full state history."""
    return run_simulation(params, factors, n_cycles, dt, init).traces()


def contractile_step(lc: float, ls: float, dt: float, Ea: float, v0: float,
                     t: float, tact: float) -> float:
    """Advance the contractile length to time t (cycle-local).

    Slaved to the sarcomere length while t <= tact; afterwards one forward
    Euler step of dlc/dt = [Ea*(ls - lc) - 1]*v0.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if t <= tact:
        return float(ls)
    return float(lc + dt * (Ea * (ls - lc) - 1.0) * v0)


def circulation_step(state: CardiacState, params: ROMParameters,
                     dt: float) -> tuple[float, float, dict]:
    """One explicit update of the windkessel compartment volumes.

    Returns (Vart_next, Vven_next, flows); flows carries q_art, q_ven, q_per
    (ml/ms) and the matching cavity increment dV, so applying all three keeps
    V + Vart + Vven exactly constant.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    c = params.circ
    p_art = (state.Vart - c.Vart0) / c.Cart
    p_ven = (state.Vven - c.Vven0) / c.Cven
    q_art = max(state.p - p_art, 0.0) / c.Rart
    q_ven = max(p_ven - state.p, 0.0) / c.Rven
    q_per = (p_art - p_ven) / c.Rper
    vart_next = state.Vart + dt * (q_art - q_per)
    vven_next = state.Vven + dt * (q_per - q_ven)
    flows = {"q_art": q_art, "q_ven": q_ven, "q_per": q_per,
             "dV": dt * (q_ven - q_art)}
    return vart_next, vven_next, flows


def init_end_diastole(params: ROMParameters, factors: CorrectionFactors,
                      p_ED: float, p_art: float = 80.0,
                      p_ven: float | None = None) -> CardiacState:
    """State at end-diastole: V solves the passive relation p(V) = p_ED.

    The passive pressure is monotone in V, so a bracketed scalar solve is
    exact to solver tolerance. p_art/p_ven set the circulation compartments
    (venous defaults to the filling pressure p_ED itself).
    """
    if p_ED <= 0:
        raise ValidationError("end-diastolic pressure must be positive")
    if p_ven is None:
        p_ven = p_ED

    def passive_pressure(V: float) -> float:
        state = CardiacState(t=0.0, V=V, p=0.0, lc=params.ls0,
                             Vart=params.circ.Vart0, Vven=params.circ.Vven0)
        return relations.cavity_pressure(state, params, factors)

    lo = params.V0
    hi = params.V0
    for _ in range(80):
        hi *= 1.5
        if passive_pressure(hi) >= p_ED:
            break
    else:
        raise NoBracket(f"end-diastolic pressure {p_ED} mmHg not reachable")

    V_ed = brentq(lambda V: passive_pressure(V) - p_ED, lo, hi,
                  xtol=1e-12, rtol=8.9e-16)
    eps = relations.fiber_strain(V_ed, params.V0, params.Vw,
                                 factors.alpha, factors.beta)
    lc = relations.sarcomere_length(eps, params.ls0)
    c = params.circ
    return CardiacState(t=0.0, V=float(V_ed), p=p_ED, lc=float(lc),
                        Vart=c.Vart0 + c.Cart * p_art,
                        Vven=c.Vven0 + c.Cven * p_ven)


def write_traces_csv(traces: list[PVTrace], path) -> None:
    """Export cycles as CSV with header t_ms,p_mmHg,V_ml,cycle (global time)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ms", "p_mmHg", "V_ml", "cycle"])
        for trace in traces:
            t0 = trace.cycle_index * trace.n * trace.dt
            for k in range(trace.n):
                writer.writerow([repr(t0 + k * trace.dt), repr(float(trace.p[k])),
                                 repr(float(trace.V[k])), trace.cycle_index])
