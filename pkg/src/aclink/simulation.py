"""Scenario composition: switch-level and averaged simulations plus reports.

The switch-level loop is PLL -> dq measurement -> PI -> active damping ->
dq_to_abc -> sequencer -> circuit.  Bulk integration runs in the compiled
kernel between control instants; a step containing a conduction or mode
event is finished in Python with localized partial steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .analysis import NoFundamental, spectrum, thd
from .circuit import (
    IG,
    IM,
    NX,
    VC,
    VL,
    VO,
    NonFiniteState,
    grid_voltage,
    guard_value,
    localize,
    model_for,
)
from .control import Command, VocController, hpf_step, null_command
from .frames import DqPair, ThreePhase
from .params import FIDELITIES, ConfigError, ConverterParams
from .sequencer import Sequencer, estimate_cycle_time

log = logging.getLogger(__name__)

CSV_HEADER = ("t", "va", "vb", "vc", "ia", "ib", "ic", "vlink", "ilink", "vout", "mode", "id", "iq")
DEFAULT_DECIMATION = 25
SETTLE_BAND = 0.05
SETTLE_SMOOTH = 0.5e-3  # centred average that removes link-cycle ripple from sampled i_q


# --------------------------------------------------------------------------
# Scenario description
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """One simulation run.

    ``schedule`` entries are ``(t, I_d*, I_q*)`` for current control or
    ``(t, v_out_ref)`` for output-voltage control; all entries must have the
    same form.  The reference of the latest entry with ``t <= now`` applies.
    """

    name: str
    params: ConverterParams = field(default_factory=ConverterParams)
    fidelity: str = "switch"
    damping: bool = True
    schedule: tuple = ((0.0, 0.0, 2.0),)
    duration: float = 0.2
    decimation: int = DEFAULT_DECIMATION

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.fidelity not in FIDELITIES:
            raise ConfigError(f"fidelity must be one of {FIDELITIES}")
        if not self.schedule:
            raise ConfigError("schedule must not be empty")
        widths = {len(e) for e in self.schedule}
        if widths not in ({2}, {3}):
            raise ConfigError("schedule entries must all be (t, v_out_ref) or (t, I_d*, I_q*)")
        times = [float(e[0]) for e in self.schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("schedule timestamps must be strictly increasing")
        if times[0] < 0.0:
            raise ConfigError("schedule timestamps must be >= 0")
        if not (self.duration > 0.0 and self.duration >= times[-1]):
            raise ConfigError("duration must be positive and cover the last schedule entry")
        if int(self.decimation) < 1:
            raise ConfigError("decimation must be >= 1")
        if self.voltage_control and self.params.output_model != "rc":
            raise ConfigError("output-voltage control needs output_model = 'rc'")

    @property
    def voltage_control(self) -> bool:
        return len(self.schedule[0]) == 2

    def reference_at(self, t: float) -> tuple:
        ref = self.schedule[0]
        for entry in self.schedule:
            if entry[0] <= t + 1e-15:
                ref = entry
            else:
                break
        return tuple(ref[1:])


@dataclass
class Waveform:
    t: np.ndarray
    v_grid: np.ndarray  # (n, 3)
    i_grid: np.ndarray  # (n, 3)
    v_link: np.ndarray
    i_link: np.ndarray
    v_out: np.ndarray
    mode: np.ndarray
    i_d: np.ndarray
    i_q: np.ndarray

    @property
    def fs(self) -> float:
        return 1.0 / float(self.t[1] - self.t[0])

    def window(self, t_start: float) -> Waveform:
        sel = self.t >= t_start - 1e-12
        return Waveform(*(getattr(self, f)[sel] for f in WAVEFORM_FIELDS))

    def last_cycles(self, n: int, f0: float) -> Waveform:
        """Exactly ``n`` fundamental periods at the end of the record."""
        m = int(round(n * self.fs / f0))
        if m > len(self.t):
            raise ValueError("record shorter than the requested number of cycles")
        return Waveform(*(getattr(self, f)[-m:] for f in WAVEFORM_FIELDS))


WAVEFORM_FIELDS = ("t", "v_grid", "i_grid", "v_link", "i_link", "v_out", "mode", "i_d", "i_q")


@dataclass
class CycleSummary:
    cycles: int = 0
    zvs_worst: float = 0.0
    charge_error_worst: float = 0.0
    peak_error_worst: float = 0.0
    energy_drift_worst: float = 0.0
    mode_order_ok: bool = True
    shortfalls: int = 0
    mean_duration: float = float("nan")
    # cycles with the input stage idle for lack of link headroom
    skipped: int = 0
    # single-pair cycles that refilled a depleted link
    recoveries: int = 0


@dataclass
class RunReport:
    scenario: str
    thd: tuple = (float("nan"),) * 3
    power_factor: float = float("nan")
    id_iq_ratio: float = float("nan")
    grid_power: float = float("nan")
    expected_power: float = float("nan")
    dominant_freq: float = float("nan")
    cycles: CycleSummary = field(default_factory=CycleSummary)
    settling_times: tuple = ()
    v_out_final: float = float("nan")
    iq_ref_range: tuple = (float("nan"), float("nan"))
    wall_time: float = float("nan")

    def lines(self) -> list[str]:
        c = self.cycles
        out = [
            f"scenario            {self.scenario}",
            "thd [%]             " + " ".join(f"{x:.3f}" for x in self.thd),
            f"power factor        {self.power_factor:.5f}",
            f"|I_d|/|I_q|         {self.id_iq_ratio:.5f}",
            f"grid power [W]      {self.grid_power:.2f} (expected {self.expected_power:.2f})",
            f"dominant distortion {self.dominant_freq:.1f} Hz",
            f"v_out final [V]     {self.v_out_final:.3f}",
            f"link cycles         {c.cycles} (mean {c.mean_duration * 1e6:.1f} us)",
            f"worst ZVS [V]       {c.zvs_worst:.4g}",
            f"idle cycles         {c.skipped} (no link headroom, {c.recoveries} recovery cycles)",
            f"worst charge error  {c.charge_error_worst:.4%}",
            f"worst peak error    {c.peak_error_worst:.4%}",
            f"worst energy drift  {c.energy_drift_worst:.3g}",
            f"mode order ok       {c.mode_order_ok}",
        ]
        for t, ts in self.settling_times:
            out.append(f"settling @ {t:.4f} s  {ts * 1e3:.3f} ms")
        return out


@dataclass
class RunResult:
    scenario: Scenario
    waveform: Waveform
    report: RunReport
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)
    mode_log: list = field(default_factory=list)
    telemetry: list = field(default_factory=list)


# --------------------------------------------------------------------------
# Switch-level simulation
# --------------------------------------------------------------------------


class _Recorder:
    def __init__(self, n_steps: int, decim: int):
        cap = n_steps // decim + 2
        self.decim = decim
        self.t = np.zeros(cap)
        self.x = np.zeros((cap, NX))
        self.mode = np.zeros(cap, dtype=np.int64)
        self.pos = 0

    def push(self, t: float, x: np.ndarray, mode: int) -> None:
        if self.pos < len(self.t):
            self.t[self.pos] = t
            self.x[self.pos] = x
            self.mode[self.pos] = mode
            self.pos += 1


class SwitchSimulation:
    """Full switch-level run of a :class:`Scenario`."""

    def __init__(self, scenario: Scenario):
        if scenario.fidelity != "switch":
            raise ConfigError("SwitchSimulation needs fidelity 'switch'")
        self.sc = scenario
        p = self.p = scenario.params
        self.model = model_for(p)
        self.seq = Sequencer(p, self.model)
        self.ctrl = VocController(p, damping=scenario.damping, outer_loop=scenario.voltage_control)
        self.cmd: Command = null_command(p)
        self.seq.reference_provider = self._reference
        self.state = self.model.initial_state()
        self.n_steps = int(round(scenario.duration / p.dt))
        self.rec = _Recorder(self.n_steps, int(scenario.decimation))
        self.ctrl_t: list[float] = []

    # -- controller hand-off ---------------------------------------------
    def _reference(self, t: float, t_prev: float | None) -> ThreePhase:
        # evaluate the rotating command at the middle of the coming cycle
        if t_prev is None:
            t_prev = estimate_cycle_time(self.p, self.cmd.abc(t), self.state.v_out)
        return self.cmd.abc(t + 0.5 * t_prev)

    def _control(self, k: int) -> None:
        p, st = self.p, self.state
        t = k * p.dt
        ref = self.sc.reference_at(t)
        v_grid = grid_voltage(p, t)
        if self.sc.voltage_control:
            self.cmd = self.ctrl.update(t, v_grid, st.i_lf, DqPair(0.0, 0.0), p.t_control,
                                        v_out=st.v_out, v_out_ref=ref[0])
        else:
            self.cmd = self.ctrl.update(t, v_grid, st.i_lf, DqPair(ref[0], ref[1]), p.t_control)
        self.ctrl_t.append(t)

    # -- guards ---------------------------------------------------------
    def _guard_arrays(self):
        st = self.state
        labels, G, H, c = self.model.conduction_guards(st.paths, st.gates)
        extra = self.seq.guards(st)
        if extra:
            labels = labels + [("seq", e[0]) for e in extra]
            G = np.vstack([G] + [e[1][None, :] for e in extra])
            H = np.vstack([H] + [e[2][None, :] for e in extra])
            c = np.concatenate([c, [e[3] for e in extra]])
        return labels, np.ascontiguousarray(G), np.ascontiguousarray(H), np.ascontiguousarray(c)

    def _at_instant(self, label) -> None:
        """Resolve conduction and mode changes at the current instant."""
        st, seq = self.state, self.seq
        blocked = [label[1]] if label and label[0] == "cur" else []
        events = self.model.settle(st, blocked=blocked)
        if label and label[0] == "seq":
            seq.on_guard(label[1], st)
        for _ in range(16):
            changed = seq.react(st, events)
            if not changed:
                break
            events = self.model.settle(st)
        else:  # pragma: no cover
            raise RuntimeError("sequencer did not settle")

    def _finish_step(self, k: int) -> None:
        """Integrate from inside step ``k`` to its end, handling every event."""
        p, st, model = self.p, self.state, self.model
        t_end = (k + 1) * p.dt
        for _ in range(64):
            h = t_end - st.t
            if h <= 1e-9 * p.dt:
                break
            labels, G, H, c = self._guard_arrays()
            topo = model.topology(st.paths)
            x1 = model.trap_step(topo, st.x, st.t, h)
            if not np.all(np.isfinite(x1)):
                raise NonFiniteState(t_end)
            best = None
            for i in range(len(labels)):
                if guard_value(G, H, c, i, st.x) < 0.0 <= guard_value(G, H, c, i, x1):
                    th, xh = localize(model, topo, st.x, st.t, h,
                                      lambda x, i=i: guard_value(G, H, c, i, x))
                    if best is None or th < best[0]:
                        best = (th, xh, labels[i])
            if best is None:
                st.x = x1
                break
            th, xh, label = best
            st.x, st.t = xh, st.t + th * h
            self._at_instant(label)
        else:  # pragma: no cover
            raise RuntimeError(f"too many events inside one step at t = {t_end:.9g}")
        st.t = t_end

    # -- main loop --------------------------------------------------------
    def run(self) -> RunResult:
        p, st, seq, rec = self.p, self.state, self.seq, self.rec
        every = p.ctrl_every
        vp, w, phi = p.v_phase_peak, p.omega_grid, p.grid_phase
        self._control(0)
        seq.start(st)
        self._at_instant(None)
        rec.push(0.0, st.x, int(st.mode))
        k = 0
        while k < self.n_steps:
            if k % every == 0 and k:
                self._control(k)
            k_ctrl = min((k // every + 1) * every, self.n_steps)
            labels, G, H, c = self._guard_arrays()
            topo = self.model.topology(st.paths)
            pos0 = rec.pos
            done, hit, x, pos = _kernel.advance(
                topo.Ad, topo.Bd, st.x, k, k_ctrl - k, p.dt, vp, w, phi, G, H, c,
                rec.decim, rec.t, rec.x, rec.pos,
            )
            rec.mode[pos0:pos] = int(seq.mode)
            rec.pos = pos
            k += done
            st.x = x
            st.t = k * p.dt
            if hit == _kernel.NON_FINITE:
                raise NonFiniteState(st.t)
            if hit >= 0:
                self._finish_step(k)
                k += 1
                st.t = k * p.dt
                if k % rec.decim == 0:
                    rec.push(st.t, st.x, int(seq.mode))
            seq.check_timeout(st.t)
        return self._result()

    def _result(self) -> RunResult:
        rec = self.rec
        n = rec.pos
        t = rec.t[:n].copy()
        x = rec.x[:n]
        tel = self.ctrl.telemetry
        wf = build_waveform(self.p, t, x, rec.mode[:n].copy(), tel)
        report = make_report(self.sc, wf, self.seq.records, self.seq.mode_log, tel)
        return RunResult(self.sc, wf, report, list(self.seq.records), list(self.seq.events),
                         list(self.seq.mode_log), list(tel))


def _grid_matrix(p: ConverterParams, t: np.ndarray) -> np.ndarray:
    ang = p.omega_grid * t + p.grid_phase
    k = 2.0 * math.pi / 3.0
    return p.v_phase_peak * np.stack([np.cos(ang), np.cos(ang - k), np.cos(ang + k)], axis=1)


def _dq_series(tel, t: np.ndarray, i_abc: np.ndarray, p: ConverterParams) -> tuple[np.ndarray, np.ndarray]:
    if tel:
        tc = np.array([r.t for r in tel])
        th = np.array([r.theta for r in tel])
        om = np.array([r.omega for r in tel])
        j = np.clip(np.searchsorted(tc, t + 1e-15, side="right") - 1, 0, len(tc) - 1)
        theta = th[j] + om[j] * (t - tc[j])
    else:
        theta = p.omega_grid * t + p.grid_phase
    k = 2.0 * math.pi / 3.0
    q = 2.0 / 3.0 * (i_abc[:, 0] * np.cos(theta) + i_abc[:, 1] * np.cos(theta - k) + i_abc[:, 2] * np.cos(theta + k))
    d = 2.0 / 3.0 * (i_abc[:, 0] * np.sin(theta) + i_abc[:, 1] * np.sin(theta - k) + i_abc[:, 2] * np.sin(theta + k))
    return d, q


def build_waveform(p: ConverterParams, t: np.ndarray, x: np.ndarray, mode: np.ndarray, tel) -> Waveform:
    i_abc = x[:, IG:IG + 3].copy()
    d, q = _dq_series(tel, t, i_abc, p)
    return Waveform(t, _grid_matrix(p, t), i_abc, x[:, VL].copy(), x[:, IM].copy(),
                    x[:, VO].copy(), mode, d, q)


# --------------------------------------------------------------------------
# Averaged simulation
# --------------------------------------------------------------------------


class AveragedSimulation:
    """CL filter fed by an ideal current source equal to the damped command.

    With voltage control the output capacitor is charged by the converter's
    input power (lossless power balance).
    """

    SUBSTEPS = 10

    def __init__(self, scenario: Scenario):
        if scenario.fidelity != "averaged":
            raise ConfigError("AveragedSimulation needs fidelity 'averaged'")
        self.sc = scenario
        p = self.p = scenario.params
        self.ctrl = VocController(p, damping=scenario.damping, outer_loop=scenario.voltage_control)
        self.h = p.t_control / self.SUBSTEPS
        # x = [i_g(3), v_c(3)], input u = [v_grid(3), i_w(3)]
        A = np.zeros((6, 6))
        B = np.zeros((6, 6))
        for k in range(3):
            A[k, k] = -p.r_s / p.L_f
            A[k, 3 + k] = -1.0 / p.L_f
            A[3 + k, k] = 1.0 / p.C_f
            B[k, k] = 1.0 / p.L_f
            B[3 + k, 3 + k] = -1.0 / p.C_f
        eye = np.eye(6)
        lhs = eye - 0.5 * self.h * A
        self.Ad = np.linalg.solve(lhs, eye + 0.5 * self.h * A)
        self.Bd = np.linalg.solve(lhs, 0.5 * self.h * B)

    def run(self) -> RunResult:
        p, sc, h = self.p, self.sc, self.h
        model = model_for(p)
        x0 = model.initial_state().x
        x = np.concatenate([x0[IG:IG + 3], x0[VC:VC + 3]])
        v_out = p.v_out
        n_ctrl = int(round(sc.duration / p.t_control))
        sub = self.SUBSTEPS
        decim = max(1, int(round(sc.decimation * p.dt / h)))
        ts, xs, vos = [0.0], [x.copy()], [v_out]
        cmd = null_command(p)
        step = 0
        for kc in range(n_ctrl):
            t = kc * p.t_control
            v_grid = grid_voltage(p, t)
            ref = sc.reference_at(t)
            if sc.voltage_control:
                cmd = self.ctrl.update(t, v_grid, ThreePhase(*x[:3]), DqPair(0.0, 0.0), p.t_control,
                                       v_out=v_out, v_out_ref=ref[0])
            else:
                cmd = self.ctrl.update(t, v_grid, ThreePhase(*x[:3]), DqPair(ref[0], ref[1]), p.t_control)
            for j in range(sub):
                t0 = t + j * h
                u0 = np.concatenate([grid_voltage(p, t0), cmd.abc(t0)])
                u1 = np.concatenate([grid_voltage(p, t0 + h), cmd.abc(t0 + h)])
                x_new = self.Ad @ x + self.Bd @ (u0 + u1)
                if sc.voltage_control:
                    pin = float(x[3:] @ u0[3:] + x_new[3:] @ u1[3:]) * 0.5
                    v_out = _output_update(v_out, pin, p, h)
                x = x_new
                step += 1
                if not np.all(np.isfinite(x)):
                    raise NonFiniteState(t0 + h)
                if step % decim == 0:
                    ts.append(t0 + h)
                    xs.append(x.copy())
                    vos.append(v_out)
        t = np.array(ts)
        X = np.array(xs)
        full = np.zeros((len(t), NX))
        full[:, IG:IG + 3] = X[:, :3]
        full[:, VC:VC + 3] = X[:, 3:]
        full[:, VO] = vos
        tel = self.ctrl.telemetry
        wf = build_waveform(p, t, full, np.zeros(len(t), dtype=np.int64), tel)
        report = make_report(sc, wf, [], [], tel)
        return RunResult(sc, wf, report, telemetry=list(tel))


def _output_update(v_out: float, p_in: float, p: ConverterParams, h: float) -> float:
    # C dv/dt = P/v - v/R, integrated on stored energy to stay well posed near 0 V
    e = 0.5 * p.C_out * v_out ** 2
    e += h * (p_in - v_out ** 2 / p.R_load)
    return math.sqrt(max(e, 0.0) * 2.0 / p.C_out)


# --------------------------------------------------------------------------
# Swept-sine response of the damping loop
# --------------------------------------------------------------------------


def damped_loop_response(params: ConverterParams, freqs, dt: float = 1e-6, settle: float = 0.02,
                         amplitude: float = 1.0, k: float | None = None) -> np.ndarray:
    """Measured complex ``i_g / i_ref`` of one phase of the damped filter.

    The converter current is ``i_ref - HPF(i_g)`` held over each control
    step ``dt``; the plant is discretized exactly for a zero-order-hold
    input.  All frequencies run side by side; each is measured by a
    single-bin DFT over the largest whole number of its periods that fits
    after ``settle``.
    """
    from scipy.linalg import expm

    p = params
    f = np.asarray(freqs, dtype=float)
    k = p.k_damp if k is None else k
    A = np.array([[-p.r_s / p.L_f, -1.0 / p.L_f], [1.0 / p.C_f, 0.0]])
    B = np.array([0.0, -1.0 / p.C_f])
    M = np.zeros((3, 3))
    M[:2, :2] = A * dt
    M[:2, 2] = B * dt
    E = expm(M)
    Ad, Bd = E[:2, :2], E[:2, 2]
    periods = np.maximum(1, np.ceil(settle * f)) / f
    n_meas = np.maximum(1, np.floor(0.1 * f)) / f
    T = float(np.max(periods + n_meas))
    n = int(math.ceil(T / dt))
    t_end = np.round((periods + n_meas) / dt).astype(np.int64)
    t_beg = t_end - np.round(n_meas / dt).astype(np.int64)
    i_g = np.zeros_like(f)
    v_c = np.zeros_like(f)
    hs = (np.zeros_like(f), np.zeros_like(f))
    acc_y = np.zeros(len(f), dtype=complex)
    acc_u = np.zeros(len(f), dtype=complex)
    w = 2.0 * math.pi * f
    from .control import HpfState

    hpf = HpfState(*hs)
    for j in range(n):
        t = j * dt
        u = amplitude * np.sin(w * t)
        if k:
            y, hpf = hpf_step(i_g, hpf, k, p.omega_hpf, dt)
        else:
            y = 0.0
        i_w = u - y
        active = (j >= t_beg) & (j < t_end)
        if active.any():
            ph = np.exp(-1j * w * t)
            acc_y += np.where(active, i_g * ph, 0.0)
            acc_u += np.where(active, u * ph, 0.0)
        i_g, v_c = Ad[0, 0] * i_g + Ad[0, 1] * v_c + Bd[0] * i_w, Ad[1, 0] * i_g + Ad[1, 1] * v_c + Bd[1] * i_w
    return acc_y / acc_u


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


def power_factor(v: np.ndarray, i: np.ndarray) -> tuple[float, float]:
    """Return (PF, mean three-phase power) over the given window."""
    pw = float(np.mean(np.sum(v * i, axis=1)))
    s = float(np.sum(np.sqrt(np.mean(v * v, axis=0) * np.mean(i * i, axis=0))))
    if s <= 0.0:
        return 0.0, pw
    return min(max(pw / s, 0.0), 1.0), pw


def settling_time(t: np.ndarray, y: np.ndarray, t_step: float, y0: float, y1: float,
                  band: float = SETTLE_BAND) -> float:
    """Time after ``t_step`` from which ``y`` stays within ``band`` of ``y1``.

    The band is relative to the final value (or to the step size when the
    final value is zero).
    """
    tol = band * (abs(y1) if y1 else abs(y1 - y0))
    sel = t >= t_step
    ts, ys = t[sel], y[sel]
    if not len(ts):
        return float("nan")
    out = np.abs(ys - y1) > tol
    if not out.any():
        return 0.0
    last = int(np.nonzero(out)[0][-1])
    if last + 1 >= len(ts):
        return float("nan")
    return float(ts[last + 1] - t_step)


def summarize_cycles(records, mode_log, params: ConverterParams, t_from: float = 0.0) -> CycleSummary:
    s = CycleSummary()
    recs = [r for r in records if r.t_start >= t_from]
    s.cycles = len(recs)
    if recs:
        s.zvs_worst = max(r.zvs_worst for r in recs)
        s.charge_error_worst = max(r.charge_error for r in recs)
        s.peak_error_worst = max(abs(r.peak_voltage - params.v_link_peak) / params.v_link_peak for r in recs)
        s.energy_drift_worst = max(r.energy_drift for r in recs)
        s.shortfalls = sum(r.shortfall for r in recs)
        s.mean_duration = float(np.mean([r.duration for r in recs]))
        s.skipped = sum(r.skipped for r in recs)
        s.recoveries = sum(r.recovery for r in recs)
    seq = [m for _, m in mode_log]
    s.mode_order_ok = all(b == a.next() for a, b in zip(seq, seq[1:]))
    return s


def expected_power(params: ConverterParams, i_q: float) -> float:
    return 1.5 * params.v_phase_peak * i_q


def make_report(sc: Scenario, wf: Waveform, records, mode_log, tel) -> RunReport:
    p = sc.params
    f0 = p.f_grid
    rep = RunReport(sc.name)
    n_per = int(round(wf.fs / f0))
    try:
        w6 = wf.last_cycles(6, f0)
        vals = []
        for ph in range(3):
            vals.append(thd(w6.i_grid[:, ph], wf.fs, f0, n_harmonics=min(50, n_per // 2 - 1)))
        rep.thd = tuple(vals)
        sp = spectrum(w6.i_grid[:, 0], wf.fs, f0)
        amps = sp.amplitudes.copy()
        amps[sp.fundamental_index] = 0.0
        rep.dominant_freq = float(sp.freqs[int(np.argmax(amps))])
    except (ValueError, NoFundamental):
        pass
    try:
        w10 = wf.last_cycles(10, f0)
        rep.power_factor, rep.grid_power = power_factor(w10.v_grid, w10.i_grid)
        iq = float(np.mean(w10.i_q))
        rep.id_iq_ratio = abs(float(np.mean(w10.i_d))) / abs(iq) if iq else float("inf")
    except ValueError:
        pass
    rep.v_out_final = float(wf.v_out[-1])
    if sc.voltage_control:
        if tel:
            iq_ref = np.array([r.i_q_ref for r in tel])
            rep.iq_ref_range = (float(iq_ref.min()), float(iq_ref.max()))
            rep.expected_power = expected_power(p, float(np.mean(iq_ref[-int(10 / f0 / p.t_control):])))
    else:
        rep.expected_power = expected_power(p, float(sc.schedule[-1][2]))
        rep.iq_ref_range = (min(e[2] for e in sc.schedule), max(e[2] for e in sc.schedule))
    rep.cycles = summarize_cycles(records, mode_log, p)
    rep.settling_times = tuple(_step_settling(sc, wf, tel))
    return rep


def _step_settling(sc: Scenario, wf: Waveform, tel):
    out = []
    if not tel or len(sc.schedule) < 2:
        return out
    tc = np.array([r.t for r in tel])
    if sc.voltage_control:
        y = np.interp(tc, wf.t, wf.v_out)
        col = 1
    else:
        y = np.array([r.i_q for r in tel])
        col = 2
    n = max(1, int(round(SETTLE_SMOOTH / sc.params.t_control)) | 1)
    if n > 1 and len(y) > n:
        y = np.convolve(y, np.ones(n) / n, mode="valid")
        tc = tc[n // 2: n // 2 + len(y)]
    for prev, cur in zip(sc.schedule, sc.schedule[1:]):
        out.append((cur[0], settling_time(tc, y, cur[0], prev[col], cur[col])))
    return out


# --------------------------------------------------------------------------
# Entry points and presets
# --------------------------------------------------------------------------


def run(scenario: Scenario) -> RunResult:
    import time

    t0 = time.perf_counter()
    sim = SwitchSimulation(scenario) if scenario.fidelity == "switch" else AveragedSimulation(scenario)
    res = sim.run()
    res.report.wall_time = time.perf_counter() - t0
    return res


def write_csv(path, wf: Waveform) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for j in range(len(wf.t)):
            row = [wf.t[j], *wf.v_grid[j], *wf.i_grid[j], wf.v_link[j], wf.i_link[j], wf.v_out[j]]
            parts = [repr(float(v)) for v in row]
            parts.append(str(int(wf.mode[j])))
            parts += [repr(float(wf.i_d[j])), repr(float(wf.i_q[j]))]
            fh.write(",".join(parts) + "\n")


def preset(name: str, params: ConverterParams | None = None) -> Scenario:
    """Built-in scenarios for the time-domain figures."""
    p = params or ConverterParams()
    if name in ("fig10", "fig11", "fig12"):
        return Scenario(name, p, damping=True, schedule=((0.0, 0.0, 2.0),), duration=0.2)
    if name in ("fig8", "fig9"):
        return Scenario(name, p, damping=False, schedule=((0.0, 0.0, 2.0),), duration=0.2)
    if name == "fig13":
        return Scenario(name, p, damping=True, schedule=((0.0, 0.0, 2.0), (0.05, 0.0, 4.0)), duration=0.25)
    if name == "fig14":
        q = p.replace(output_model="rc", v_out=50.0)
        return Scenario(name, q, damping=True, schedule=((0.0, 100.0),), duration=0.3)
    if name == "zero":
        return Scenario(name, p, damping=True, schedule=((0.0, 0.0, 0.0),), duration=0.05)
    raise KeyError(f"unknown preset {name!r}")


PRESETS = ("fig8", "fig9", "fig10", "fig11", "fig12", "fig13", "fig14", "zero")

__all__ = [
    "Scenario", "Waveform", "RunReport", "RunResult", "CycleSummary", "SwitchSimulation",
    "AveragedSimulation", "damped_loop_response", "power_factor", "settling_time", "run",
    "write_csv", "preset", "PRESETS", "CSV_HEADER", "expected_power", "make_report",
    "summarize_cycles", "build_waveform",
]
