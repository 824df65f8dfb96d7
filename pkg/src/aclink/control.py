"""Voltage-oriented current control with active damping, plus the outer loop.

The current PI is the standard ``G_i(s) = K_p + K_i/s`` acting per axis on
grid-current error.  Active damping high-pass filters the filter-inductor
(grid) current with ``k s / (1 + s/w_c)`` and subtracts the result from the
PI output, so the filter sees an emulated damping resistor.  The outer loop
turns output-voltage error into the q-axis (active) current reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .frames import (
    DqPair,
    PllGains,
    PllState,
    ThreePhase,
    abc_to_dq,
    dq_to_abc,
    pll_step,
    wrap_angle,
)
from .params import ConverterParams

INF = float("inf")


@dataclass(frozen=True)
class PiState:
    integrator: float = 0.0
    limits: tuple[float, float] = (-INF, INF)


def pi_step(error: float, state: PiState, K_p: float, K_i: float, dt: float) -> tuple[float, PiState]:
    """One PI update: output from the current integrator, then integrate.

    Anti-windup by back-calculation: after integrating, the integrator is
    held inside the band where ``K_p*error + integrator`` stays within the
    output limits, so it never winds up while the output is saturated.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    lo, hi = state.limits
    out = min(max(K_p * error + state.integrator, lo), hi)
    integ = state.integrator + K_i * error * dt
    integ = min(max(integ, lo - K_p * error), hi - K_p * error)
    return out, PiState(integ, state.limits)


class HpfState(NamedTuple):
    x_prev: float = 0.0
    y_prev: float = 0.0


def hpf_step(x, state: HpfState, k: float, omega_c: float, dt: float):
    """Bilinear discretisation of ``k s / (1 + s/omega_c)``.

    Works element-wise on numpy arrays as well as on floats.
    """
    if dt <= 0.0 or omega_c <= 0.0:
        raise ValueError("dt and omega_c must be positive")
    a = 2.0 / dt
    y = (k * omega_c * a * (x - state.x_prev) - (omega_c - a) * state.y_prev) / (a + omega_c)
    return y, HpfState(x, y)


def current_controller_step(
    i_dq: DqPair,
    i_ref_dq: DqPair,
    states: tuple[PiState, PiState],
    params: ConverterParams,
    dt: float,
) -> tuple[DqPair, tuple[PiState, PiState]]:
    """Independent PI per axis on the grid-current error."""
    ud, sd = pi_step(i_ref_dq.d - i_dq.d, states[0], params.K_p, params.K_i, dt)
    uq, sq = pi_step(i_ref_dq.q - i_dq.q, states[1], params.K_p, params.K_i, dt)
    return DqPair(ud, uq), (sd, sq)


def active_damping_step(
    i_lf_dq: DqPair,
    ctrl_out: DqPair,
    hpf_states: tuple[HpfState, HpfState],
    params: ConverterParams,
    dt: float,
    k: float | None = None,
) -> tuple[DqPair, tuple[HpfState, HpfState]]:
    """Subtract the high-passed inductor current from the PI output."""
    k = params.k_damp if k is None else k
    if k == 0.0:
        return ctrl_out, hpf_states
    yd, hd = hpf_step(i_lf_dq.d, hpf_states[0], k, params.omega_hpf, dt)
    yq, hq = hpf_step(i_lf_dq.q, hpf_states[1], k, params.omega_hpf, dt)
    return DqPair(ctrl_out.d - yd, ctrl_out.q - yq), (hd, hq)


def output_controller_step(
    v_out: float, v_out_ref: float, state: PiState, dt: float, params: ConverterParams
) -> tuple[float, PiState]:
    """PI on output-voltage error producing the q-axis current reference."""
    return pi_step(v_out_ref - v_out, state, params.K_p_v, params.K_i_v, dt)


def output_limits(params: ConverterParams) -> tuple[float, float]:
    # the link only draws energy from the grid, so the active reference is >= 0
    return (0.0, params.i_rated_peak)


# --------------------------------------------------------------------------
# Composed controller
# --------------------------------------------------------------------------


class Telemetry(NamedTuple):
    t: float
    theta: float
    omega: float
    i_d: float
    i_q: float
    i_d_ref: float
    i_q_ref: float
    damp_d: float
    damp_q: float
    u_d: float
    u_q: float
    sat_d: bool
    sat_q: bool
    sat_v: bool


class Command(NamedTuple):
    """Converter current command produced at one control instant."""

    t: float
    theta: float
    omega: float
    dq: DqPair
    damp_abc: ThreePhase

    def abc(self, t: float) -> ThreePhase:
        """Per-phase reference at time ``t`` (rotating the dq command forward)."""
        th = self.theta + self.omega * (t - self.t)
        x = dq_to_abc(self.dq, th)
        d = self.damp_abc
        return ThreePhase(x.a - d.a, x.b - d.b, -(x.a - d.a) - (x.b - d.b))


@dataclass
class VocController:
    """PLL -> dq measurement -> [outer loop] -> PI -> active damping.

    ``damping=False`` runs with ``k = 0``.  ``damping_frame`` selects where
    the high-pass filter acts: on dq currents (default) or per phase on the
    stationary abc currents.
    """

    params: ConverterParams
    damping: bool = True
    outer_loop: bool = False
    pll_gains: PllGains | None = None
    pll: PllState = field(default_factory=PllState)
    pi: tuple[PiState, PiState] = None
    hpf: tuple = None
    pi_v: PiState = None
    telemetry: list = field(default_factory=list)
    _primed: bool = field(default=False, repr=False)

    def __post_init__(self) -> None:
        p = self.params
        if self.pll_gains is None:
            self.pll_gains = PllGains.from_bandwidth(p.pll_bandwidth, p.pll_damping, p.f_grid)
        if self.pll == PllState():
            # start synchronised: the grid angle at t = 0 is the configured phase
            self.pll = PllState(wrap_angle(p.grid_phase), p.omega_grid, 0.0)
        lim = (-p.i_limit, p.i_limit)
        if self.pi is None:
            self.pi = (PiState(0.0, lim), PiState(0.0, lim))
        if self.hpf is None:
            n = 3 if p.damping_frame == "abc" else 2
            self.hpf = tuple(HpfState() for _ in range(n))
        if self.pi_v is None:
            self.pi_v = PiState(0.0, output_limits(p))

    @property
    def k(self) -> float:
        return self.params.k_damp if self.damping else 0.0

    def update(
        self,
        t: float,
        v_grid: ThreePhase,
        i_grid: ThreePhase,
        i_ref_dq: DqPair,
        dt: float,
        v_out: float | None = None,
        v_out_ref: float | None = None,
    ) -> Command:
        p = self.params
        theta = self.pll.theta
        omega = self.pll.omega if self.pll.omega else p.omega_grid
        i_dq = abc_to_dq(i_grid, theta)
        if not self._primed:
            # seed the filter memory with the first sample so start-up is not a step
            xs = i_dq if p.damping_frame == "dq" else i_grid
            self.hpf = tuple(HpfState(x, 0.0) for x in xs)
            self._primed = True
        sat_v = False
        if self.outer_loop:
            iq_ref, self.pi_v = output_controller_step(v_out, v_out_ref, self.pi_v, dt, p)
            lo, hi = self.pi_v.limits
            sat_v = iq_ref <= lo or iq_ref >= hi
            i_ref_dq = DqPair(i_ref_dq.d, iq_ref)
        u, self.pi = current_controller_step(i_dq, i_ref_dq, self.pi, p, dt)
        lim = p.i_limit
        sat = (abs(u.d) >= lim, abs(u.q) >= lim)
        damp_abc = ThreePhase(0.0, 0.0, 0.0)
        if p.damping_frame == "dq":
            cmd, self.hpf = active_damping_step(i_dq, u, self.hpf, p, dt, k=self.k)
            damp = u - cmd
        else:
            cmd = u
            if self.k:
                ys, hs = [], []
                for x, h in zip(i_grid, self.hpf):
                    y, h = hpf_step(x, h, self.k, p.omega_hpf, dt)
                    ys.append(y)
                    hs.append(h)
                self.hpf = tuple(hs)
                damp_abc = ThreePhase(*ys)
            damp = abc_to_dq(damp_abc, theta)
        self.telemetry.append(
            Telemetry(t, theta, omega, i_dq.d, i_dq.q, i_ref_dq.d, i_ref_dq.q,
                      damp.d, damp.q, u.d, u.q, sat[0], sat[1], sat_v)
        )
        self.pll = pll_step(v_grid, self.pll, dt, self.pll_gains)
        return Command(t, theta, omega, cmd, damp_abc)


def null_command(params: ConverterParams) -> Command:
    return Command(0.0, params.grid_phase, params.omega_grid, DqPair(0.0, 0.0), ThreePhase(0.0, 0.0, 0.0))


__all__ = [
    "PiState", "pi_step", "HpfState", "hpf_step", "current_controller_step",
    "active_damping_step", "output_controller_step", "VocController", "Command",
    "Telemetry", "output_limits", "null_command",
]
