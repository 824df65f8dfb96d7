"""Piecewise-linear power-stage model.

Grid source -> series ``L_f``/``r_s`` -> star-connected ``C_f`` -> reverse
blocking bridge -> resonant link (``L_m`` parallel ``C_link``) -> output
switch -> output stage (stiff dc source or capacitor with resistive load).

The state vector is::

    x = [i_ga, i_gb, i_gc, v_ca, v_cb, v_cc, v_link, i_link, v_out, q_a, q_b, q_c]

``i_link`` is the magnetizing current (top terminal -> bottom terminal
through ``L_m``) and ``q_*`` the charge each phase has delivered to the
bridge since the start of the current link cycle.

A conducting *path* ties capacitor voltages together with an ideal switch.
Input path ``"ac"`` is Q1a + Q2c (phase a into the link top, link bottom
back to phase c) and enforces ``v_link = v_ca - v_cc``; the output path
``"o"`` enforces ``-v_link = v_out``.  Constraints are handled exactly with
Lagrange multipliers (the path currents), so every topology is a plain
linear ODE ``dx/dt = A x + B v_grid(t)`` integrated with the trapezoidal
rule.  Path currents are linear outputs ``lam @ x``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .frames import ThreePhase
from .params import ConverterParams, DomainError

IG = 0
VC = 3
VL = 6
IM = 7
VO = 8
QC = 9
NX = 12

PHASES = "abc"
INPUT_PATHS = tuple(x + y for x in PHASES for y in PHASES if x != y)
OUTPUT_PATH = "o"
ALL_PATHS = INPUT_PATHS + (OUTPUT_PATH,)
SWITCHES = ("Q1a", "Q1b", "Q1c", "Q2a", "Q2b", "Q2c", "Qo")

_TRIG = 2.0 * math.pi / 3.0


class NonFiniteState(RuntimeError):
    """The integrator produced a non-finite state (step too large or a fault)."""

    def __init__(self, t: float, message: str = "non-finite state"):
        super().__init__(f"{message} at t = {t:.9g} s")
        self.t = t


class Mode(enum.IntEnum):
    M1 = 1
    M2 = 2
    M3 = 3
    M4 = 4
    M5 = 5
    M6 = 6

    def next(self) -> Mode:
        return Mode(self % 6 + 1)


def path_switches(path: str) -> tuple[str, ...]:
    if path == OUTPUT_PATH:
        return ("Qo",)
    return ("Q1" + path[0], "Q2" + path[1])


def enabled_paths(gates) -> frozenset:
    """Paths whose every switch is gated on."""
    return frozenset(p for p in ALL_PATHS if all(s in gates for s in path_switches(p)))


class SwitchEvent(NamedTuple):
    t: float
    switch_id: str
    edge: str  # "on" | "off"
    v_across: float
    i_through: float
    mode_at_event: Mode


@dataclass
class CircuitState:
    t: float
    x: np.ndarray
    mode: Mode = Mode.M6
    gates: frozenset = frozenset()
    paths: frozenset = frozenset()

    @property
    def i_lf(self) -> ThreePhase:
        return ThreePhase(*self.x[IG:IG + 3].tolist())

    @property
    def v_cf(self) -> ThreePhase:
        return ThreePhase(*self.x[VC:VC + 3].tolist())

    @property
    def v_link(self) -> float:
        return float(self.x[VL])

    @property
    def i_link(self) -> float:
        return float(self.x[IM])

    @property
    def v_out(self) -> float:
        return float(self.x[VO])

    @property
    def cycle_charge(self) -> ThreePhase:
        return ThreePhase(*self.x[QC:QC + 3].tolist())

    def copy(self) -> CircuitState:
        return CircuitState(self.t, self.x.copy(), self.mode, self.gates, self.paths)


# --------------------------------------------------------------------------
# Small closed-form helpers
# --------------------------------------------------------------------------


def line_line_voltages(v: ThreePhase) -> tuple[float, float, float]:
    """Signed pair voltages ``(V_ab, V_bc, V_ca)``."""
    return (v.a - v.b, v.b - v.c, v.c - v.a)


def link_energy(state: CircuitState, params: ConverterParams) -> float:
    return 0.5 * params.C_link * state.v_link ** 2 + 0.5 * params.L_m * state.i_link ** 2


def resonance_frequency(L: float, C: float) -> float:
    if not (L > 0.0 and C > 0.0):
        raise DomainError(f"resonance needs L > 0 and C > 0, got L={L!r}, C={C!r}")
    return 1.0 / (2.0 * math.pi * math.sqrt(L * C))


def grid_voltage(params: ConverterParams, t: float) -> ThreePhase:
    ang = params.omega_grid * t + params.grid_phase
    vp = params.v_phase_peak
    return ThreePhase(vp * math.cos(ang), vp * math.cos(ang - _TRIG), vp * math.cos(ang + _TRIG))


# --------------------------------------------------------------------------
# Topologies
# --------------------------------------------------------------------------


@dataclass
class Topology:
    paths: tuple[str, ...]
    A: np.ndarray
    B: np.ndarray
    lam: np.ndarray  # path currents = lam @ x
    K: np.ndarray  # constraint rows, K @ x == 0 while conducting
    Ad: np.ndarray = field(repr=False, default=None)
    Bd: np.ndarray = field(repr=False, default=None)

    def currents(self, x: np.ndarray) -> dict[str, float]:
        vals = self.lam @ x
        return {p: float(v) for p, v in zip(self.paths, vals)}


class CircuitModel:
    """Matrices and topology cache for one parameter set."""

    def __init__(self, params: ConverterParams):
        self.params = params
        p = params
        cinv = np.zeros(NX)
        cinv[VC:VC + 3] = 1.0 / p.C_f
        cinv[VL] = 1.0 / p.C_link
        if p.output_model == "rc":
            cinv[VO] = 1.0 / p.C_out
        self.cinv = cinv
        J = np.zeros((NX, NX))
        for k in range(3):
            J[VC + k, IG + k] = 1.0
        J[VL, IM] = -1.0
        if p.output_model == "rc":
            J[VO, VO] = -1.0 / p.R_load
        self.J = J
        A0 = np.zeros((NX, NX))
        B0 = np.zeros((NX, 3))
        for k in range(3):
            A0[IG + k, IG + k] = -p.r_s / p.L_f
            A0[IG + k, VC + k] = -1.0 / p.L_f
            B0[IG + k, k] = 1.0 / p.L_f
        A0[IM, VL] = 1.0 / p.L_m
        self._A0 = A0
        self._B0 = B0
        self._topologies: dict[tuple[str, ...], Topology] = {}

    # ------------------------------------------------------------------
    @staticmethod
    def constraint_row(path: str) -> np.ndarray:
        row = np.zeros(NX)
        if path == OUTPUT_PATH:
            row[VL] = 1.0
            row[VO] = 1.0
        else:
            row[VC + PHASES.index(path[0])] = -1.0
            row[VC + PHASES.index(path[1])] = 1.0
            row[VL] = 1.0
        return row

    def forward_voltage(self, path: str, x: np.ndarray) -> float:
        """Voltage that forward-biases ``path`` (>= 0 means it would conduct)."""
        return float(-(self.constraint_row(path) @ x))

    def topology(self, paths) -> Topology:
        key = tuple(sorted(paths))
        topo = self._topologies.get(key)
        if topo is None:
            topo = self._build(key)
            self._topologies[key] = topo
        return topo

    def _build(self, paths: tuple[str, ...]) -> Topology:
        A = self._A0.copy()
        cap = self.cinv > 0.0
        m = len(paths)
        if m:
            K = np.array([self.constraint_row(p) for p in paths])
            S = (K * self.cinv) @ K.T
            lam = -np.linalg.solve(S, (K * self.cinv) @ self.J)
        else:
            K = np.zeros((0, NX))
            lam = np.zeros((0, NX))
        inj = self.J + K.T @ lam
        A[cap] = (self.cinv[:, None] * inj)[cap]
        # converter current drawn from each phase node
        iw = -K[:, VC:VC + 3].T @ lam
        A[QC:QC + 3] = iw
        topo = Topology(paths, A, self._B0.copy(), lam, K)
        topo.Ad, topo.Bd = self.discretize(topo, self.params.dt)
        return topo

    @staticmethod
    def discretize(topo: Topology, h: float) -> tuple[np.ndarray, np.ndarray]:
        eye = np.eye(NX)
        lhs = eye - 0.5 * h * topo.A
        Ad = np.linalg.solve(lhs, eye + 0.5 * h * topo.A)
        Bd = np.linalg.solve(lhs, 0.5 * h * topo.B)
        return Ad, Bd

    # ------------------------------------------------------------------
    def source(self, t: float) -> np.ndarray:
        return np.asarray(grid_voltage(self.params, t))

    def trap_step(self, topo: Topology, x: np.ndarray, t: float, h: float) -> np.ndarray:
        if h == self.params.dt:
            Ad, Bd = topo.Ad, topo.Bd
        else:
            Ad, Bd = self.discretize(topo, h)
        return Ad @ x + Bd @ (self.source(t) + self.source(t + h))

    def snap(self, topo: Topology, x: np.ndarray) -> np.ndarray:
        """Charge-conserving projection onto the constraint set of ``topo``.

        A no-op for zero-voltage turn-on; otherwise models the impulsive
        charge exchange of a hard-switched ideal switch.
        """
        if not topo.paths:
            return x
        K = topo.K
        resid = K @ x
        if not np.any(resid):
            return x
        S = (K * self.cinv) @ K.T
        mu = -np.linalg.solve(S, resid)
        out = x.copy()
        out += self.cinv * (K.T @ mu)
        out[QC:QC + 3] += -K[:, VC:VC + 3].T @ mu
        return out

    # ------------------------------------------------------------------
    def conduction_guards(self, paths, gates) -> tuple[list, np.ndarray, np.ndarray, np.ndarray]:
        """Guard rows for conduction changes under the current topology.

        Armed (gated, blocked) paths fire when their forward voltage becomes
        non-negative; conducting paths fire when their current reaches zero.
        """
        topo = self.topology(paths)
        labels = []
        rows = []
        for p in sorted(enabled_paths(gates) - set(paths)):
            labels.append(("arm", p))
            rows.append(-self.constraint_row(p))
        for i, p in enumerate(topo.paths):
            labels.append(("cur", p))
            rows.append(-topo.lam[i])
        G = np.array(rows).reshape(len(rows), NX)
        return labels, G, np.zeros_like(G), np.zeros(len(rows))

    def settle(self, state: CircuitState, v_tol: float = 1e-9, i_tol: float = 1e-12,
               blocked=()) -> list[SwitchEvent]:
        """Resolve which gated paths conduct right now, updating ``state`` in place.

        Removes paths whose gate dropped or whose current reversed, and adds
        gated paths that are forward biased (largest forward voltage first).
        Paths in ``blocked`` (those whose current just reached zero) are
        dropped and not re-admitted at this instant.  Returns one event per
        switch whose conduction changed.
        """
        before = set(state.paths)
        v_before: dict[str, float] = {}
        i_before = self._switch_currents(state)
        enabled = enabled_paths(state.gates)
        enabled = enabled - set(blocked)
        paths = set(state.paths) & enabled
        for _ in range(16):
            topo = self.topology(paths)
            cur = topo.lam @ state.x
            if len(cur) and cur.min() < -i_tol:
                drop = topo.paths[int(np.argmin(cur))]
                paths.discard(drop)
                # a path pushed out by reverse current stays out for this instant
                enabled = enabled - {drop}
                continue
            cands = [(self.forward_voltage(p, state.x), p) for p in sorted(enabled - paths)]
            cands = [c for c in cands if c[0] >= -v_tol]
            if cands:
                fv, p = max(cands)
                v_before[p] = fv
                paths.add(p)
                state.x = self.snap(self.topology(paths), state.x)
                continue
            break
        else:  # pragma: no cover - would need a pathological switching pattern
            raise RuntimeError("conduction state did not settle")
        state.paths = frozenset(paths)
        return self._switch_events(state, before, v_before, i_before)

    def _switch_currents(self, state: CircuitState) -> dict[str, float]:
        topo = self.topology(state.paths)
        out = dict.fromkeys(SWITCHES, 0.0)
        for p, i in topo.currents(state.x).items():
            for s in path_switches(p):
                out[s] += i
        return out

    def _switch_events(self, state, before, v_before, i_before) -> list[SwitchEvent]:
        on_before = {s for p in before for s in path_switches(p)}
        on_after = {s for p in state.paths for s in path_switches(p)}
        if on_before == on_after:
            return []
        i_after = self._switch_currents(state)
        events = []
        for s in SWITCHES:
            if s in on_after and s not in on_before:
                fv = max((v for p, v in v_before.items() if s in path_switches(p)), default=0.0)
                events.append(SwitchEvent(state.t, s, "on", fv, i_after[s], state.mode))
            elif s in on_before and s not in on_after:
                fv = max(
                    (abs(self.forward_voltage(p, state.x)) for p in before if s in path_switches(p)),
                    default=0.0,
                )
                events.append(SwitchEvent(state.t, s, "off", fv, i_before[s], state.mode))
        return events

    # ------------------------------------------------------------------
    def initial_state(self, v_link: float | None = None) -> CircuitState:
        """Filter in its no-load sinusoidal steady state, link charged to its peak."""
        p = self.params
        w = p.omega_grid
        z = complex(p.r_s, w * p.L_f) + 1.0 / complex(0.0, w * p.C_f)
        x = np.zeros(NX)
        for k in range(3):
            vs = p.v_phase_peak * complex(math.cos(p.grid_phase - k * _TRIG), math.sin(p.grid_phase - k * _TRIG))
            i = vs / z
            x[IG + k] = i.real
            x[VC + k] = (i / complex(0.0, w * p.C_f)).real
        x[VL] = p.v_link_peak if v_link is None else v_link
        x[VO] = p.v_out
        return CircuitState(0.0, x, Mode.M6)


@lru_cache(maxsize=32)
def model_for(params: ConverterParams) -> CircuitModel:
    return CircuitModel(params)


# --------------------------------------------------------------------------
# Guard localisation
# --------------------------------------------------------------------------


def guard_value(G: np.ndarray, H: np.ndarray, c: np.ndarray, i: int, x: np.ndarray) -> float:
    return float(G[i] @ x + H[i] @ (x * x) + c[i])


def localize(model: CircuitModel, topo: Topology, x0: np.ndarray, t0: float, h: float,
             guard, iters: int = 30, tol: float = 1e-12) -> tuple[float, np.ndarray]:
    """Find the fraction of a step where ``guard(x)`` crosses zero upward.

    Illinois-modified regula falsi on the linearly interpolated guard value;
    the returned state is on the ``g >= 0`` side of the crossing.
    """
    lo, hi = 0.0, 1.0
    g_lo = guard(x0)
    x_hi = model.trap_step(topo, x0, t0, h)
    g_hi = guard(x_hi)
    side = 0
    for _ in range(iters):
        if g_hi - g_lo <= 0.0:
            break
        th = lo + (hi - lo) * (-g_lo) / (g_hi - g_lo)
        if th <= lo or th >= hi:
            th = 0.5 * (lo + hi)
        xm = model.trap_step(topo, x0, t0, th * h)
        gm = guard(xm)
        if gm >= 0.0:
            hi, g_hi, x_hi = th, gm, xm
            if side == 1:
                g_lo *= 0.5
            side = 1
        else:
            lo, g_lo = th, gm
            if side == -1:
                g_hi *= 0.5
            side = -1
        if g_hi < tol * (1.0 + abs(g_lo)) or (hi - lo) < 1e-9:
            break
    return hi, x_hi


def step(state: CircuitState, gates, params: ConverterParams, dt: float,
         extra_guards=()) -> tuple[CircuitState, list[SwitchEvent]]:
    """Advance one integration step of length ``dt`` under ``gates``.

    If a conduction change (forward bias of an armed path, or zero current in
    a conducting one) or one of ``extra_guards`` (callables ``g(x)``, firing
    on an upward zero crossing) happens inside the step, the state is
    returned at the localized crossing instant instead.
    """
    if dt > params.dt * (1.0 + 1e-12):
        raise ValueError("dt exceeds params.dt")
    model = model_for(params)
    new = state.copy()
    new.gates = frozenset(gates)
    events = model.settle(new)
    labels, G, H, c = model.conduction_guards(new.paths, new.gates)
    guards = [lambda x, i=i: guard_value(G, H, c, i, x) for i in range(len(labels))]
    guards += list(extra_guards)
    topo = model.topology(new.paths)
    x1 = model.trap_step(topo, new.x, new.t, dt)
    if not np.all(np.isfinite(x1)):
        raise NonFiniteState(new.t + dt)
    g0 = [g(new.x) for g in guards]
    hits = [i for i, g in enumerate(guards) if g0[i] < 0.0 <= g(x1)]
    if not hits:
        new.x, new.t = x1, new.t + dt
        return new, events
    best = None
    for i in hits:
        th, xh = localize(model, topo, new.x, new.t, dt, guards[i])
        if best is None or th < best[0]:
            best = (th, xh, i)
    th, xh, i = best
    new.x, new.t = xh, new.t + th * dt
    blocked = [labels[i][1]] if i < len(labels) and labels[i][0] == "cur" else []
    events += model.settle(new, blocked=blocked)
    return new, events
