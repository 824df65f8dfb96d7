"""Six-mode switch controller for the partial-resonance AC link.

One link cycle:

M1  link voltage has peaked; the three planned input switches are gated and
    the first (higher-voltage) phase pair starts conducting when the falling
    link voltage reaches it.  Ends when the first minority phase has
    delivered its charge target.
M2  partial resonance, nothing conducts.
M3  second phase pair conducts from the instant the link voltage reaches it
    until the remaining two phases meet their (equal and opposite) targets.
M4  partial resonance through zero link voltage (link current peaks here).
M5  output switch conducts once ``-v_link`` reaches ``v_out``; stops when the
    link energy falls to the residual needed to ring back to ``v_link_peak``.
M6  partial resonance back up to the positive peak, then M1 again.

"Average current equals reference" is implemented as charge accounting:
the targets for a cycle are ``i_ref * t_cycle`` with ``t_cycle`` the measured
duration of the previous cycle.

Soft switching needs every planned pair voltage between ``-v_out`` and the
link voltage.  A cycle whose pairs already sit above the link voltage at its
start runs with the input stage idle, unless the link is depleted, in which
case one pair below the link voltage refills it.  If the link is dragged down to
``-v_out`` while input switches conduct, conduction ends there and the
output switch takes over at zero voltage.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    IM,
    NX,
    PHASES,
    QC,
    VL,
    VO,
    CircuitModel,
    CircuitState,
    Mode,
    SwitchEvent,
    line_line_voltages,
    link_energy,
    path_switches,
)
from .frames import ThreePhase
from .params import ConverterParams

log = logging.getLogger(__name__)

ZERO_REF_TOL = 1e-9
DEGENERATE_REL_TOL = 1e-6
# localized guards and the direct re-check may differ by rounding
GUARD_RTOL = 1e-9
# a link peak this far below v_link_peak triggers a recovery cycle
RECOVERY_TOL = 0.02
# recovery pairs stay this far below the link voltage so the crossing is clean
RECOVERY_MARGIN = 0.95


class DegenerateReference(ValueError):
    """One phase reference is zero; only a single phase pair can conduct.

    ``plan`` holds the single-pair plan the sequencer falls back to.
    """

    def __init__(self, message: str, plan: ConductionPlan):
        super().__init__(message)
        self.plan = plan


class AllZeroReference(ValueError):
    pass


class GuardTimeout(RuntimeError):
    def __init__(self, t: float, mode: Mode, limit: float):
        super().__init__(
            f"link cycle exceeded {limit * 1e6:.0f} us in {mode.name} at t = {t:.9g} s"
        )
        self.t = t
        self.mode = mode


@dataclass(frozen=True)
class ConductionPlan:
    """Which input switch of each phase is used this cycle and in what order.

    ``first``/``second`` are path names (top phase + bottom phase, e.g.
    ``"ac"`` for Q1a + Q2c).  ``second`` is None for a single-pair cycle.
    """

    selection: dict
    shared: str
    first: str
    second: str | None

    @property
    def gates(self) -> frozenset:
        return frozenset(path_switches(self.first) + (path_switches(self.second) if self.second else ()))

    @property
    def switches(self) -> tuple[str, ...]:
        return tuple(sorted(self.gates))

    def minority(self, path: str) -> str:
        """The non-shared phase of ``path``."""
        return path[1] if path[0] == self.shared else path[0]


def _pair(shared: str, other: str, shared_top: bool) -> str:
    return shared + other if shared_top else other + shared


def select_conduction_set(i_ref: ThreePhase, v_cf: ThreePhase, rel_tol: float = DEGENERATE_REL_TOL) -> ConductionPlan:
    """Pick one switch per phase and the order the two phase pairs conduct in.

    The phase with the largest reference magnitude is shared by both pairs;
    a positive reference (current drawn from the grid) selects the top
    switch.  The pair with the larger signed pair voltage is reached first by
    the falling link voltage.
    """
    refs = dict(zip(PHASES, i_ref))
    vals = dict(zip(PHASES, v_cf))
    big = max(abs(v) for v in refs.values())
    if big <= ZERO_REF_TOL:
        raise AllZeroReference("all three phase references are zero")
    if abs(sum(refs.values())) > 1e-6 * big:
        raise ValueError(f"phase references must sum to zero, got {tuple(i_ref)}")
    shared = max(PHASES, key=lambda ph: abs(refs[ph]))
    shared_top = refs[shared] > 0.0
    selection = {ph: ("Q1" if (refs[ph] > 0.0) else "Q2") + ph for ph in PHASES}
    selection[shared] = ("Q1" if shared_top else "Q2") + shared
    others = [ph for ph in PHASES if ph != shared]
    for ph in others:
        selection[ph] = ("Q2" if shared_top else "Q1") + ph
    pairs = [_pair(shared, ph, shared_top) for ph in others]

    def pair_voltage(path: str) -> float:
        return vals[path[0]] - vals[path[1]]

    live = [p for p, ph in zip(pairs, others) if abs(refs[ph]) > rel_tol * big]
    if len(live) == 1:
        plan = ConductionPlan(selection, shared, live[0], None)
        raise DegenerateReference("one phase reference is zero; single-pair cycle", plan)
    first, second = sorted(pairs, key=pair_voltage, reverse=True)
    return ConductionPlan(selection, shared, first, second)


def charge_targets(i_ref: ThreePhase, t_cycle: float) -> ThreePhase:
    if t_cycle <= 0.0:
        raise ValueError("t_cycle must be positive")
    return ThreePhase(i_ref.a * t_cycle, i_ref.b * t_cycle, i_ref.c * t_cycle)


def estimate_cycle_time(params: ConverterParams, i_ref: ThreePhase, v_out: float | None = None) -> float:
    """Analytic first-cycle duration from link resonance and energy throughput."""
    p = params
    v_out = p.v_out if v_out is None else v_out
    amp = math.sqrt(2.0 / 3.0 * (i_ref.a ** 2 + i_ref.b ** 2 + i_ref.c ** 2))
    power = 1.5 * p.v_phase_peak * amp
    t_res = math.pi * math.sqrt(p.L_m * p.C_link)
    e_res = p.peak_link_energy
    v_chg = 0.75 * p.v_ll_peak
    t = 2.0 * t_res
    for _ in range(20):
        i_pk = math.sqrt(2.0 * (power * t + e_res) / p.L_m)
        t = t_res + p.L_m * i_pk / v_chg + p.L_m * i_pk / max(v_out, 1e-3)
    return t


def _has_headroom(plan: ConductionPlan, state: CircuitState) -> bool:
    """True when every planned pair voltage is below the link voltage."""
    v = dict(zip(PHASES, state.v_cf))
    paths = [p for p in (plan.first, plan.second) if p]
    return all(v[p[0]] - v[p[1]] < state.v_link for p in paths)


def recovery_plan(state: CircuitState, params: ConverterParams) -> tuple[ConductionPlan, ThreePhase] | None:
    """Single-pair plan that refills a depleted link, or None.

    Picks the highest positive pair voltage below ``RECOVERY_MARGIN * v_link``;
    while it conducts the link sits at the pair voltage, so the charge that
    restores the peak energy is the energy deficit over that voltage.
    """
    v_link = state.v_link
    if v_link >= (1.0 - RECOVERY_TOL) * params.v_link_peak:
        return None
    v = dict(zip(PHASES, state.v_cf))
    paths = [a + b for a in PHASES for b in PHASES if a != b]
    ok = [pth for pth in paths if 0.0 < v[pth[0]] - v[pth[1]] < RECOVERY_MARGIN * v_link]
    if not ok:
        return None
    path = max(ok, key=lambda pth: v[pth[0]] - v[pth[1]])
    top, bottom = path
    deficit = params.peak_link_energy + params.eps_energy - 0.5 * params.C_link * v_link ** 2
    q = deficit / (v[top] - v[bottom])
    third = next(ph for ph in PHASES if ph not in path)
    plan = ConductionPlan({top: "Q1" + top, bottom: "Q2" + bottom}, top, path, None)
    charges = {top: q, bottom: -q, third: 0.0}
    return plan, ThreePhase(*(charges[ph] for ph in PHASES))


@dataclass
class CycleRecord:
    """Per-cycle diagnostics."""

    t_start: float
    t_ref: float
    i_ref: ThreePhase
    targets: ThreePhase
    duration: float = float("nan")
    charge: ThreePhase | None = None
    charge_error: float = 0.0
    peak_voltage: float = float("nan")
    zvs_worst: float = 0.0  # input switches only
    energy_drift: float = 0.0
    modes: list = field(default_factory=list)
    shortfall: bool = False
    # largest |line-line| filter-capacitor voltage and link voltage at cycle start;
    # soft switching presumes the first stays below the second
    v_ll_max: float = 0.0
    v_link_start: float = float("nan")
    skipped: bool = False
    recovery: bool = False

    @property
    def feasible(self) -> bool:
        return self.v_ll_max < self.v_link_start


class Sequencer:
    """Mode state machine.  Mutates ``state.gates`` and ``state.mode``."""

    def __init__(self, params: ConverterParams, model: CircuitModel):
        self.params = params
        self.model = model
        self.mode = Mode.M6
        self.i_ref = ThreePhase(0.0, 0.0, 0.0)
        self.plan: ConductionPlan | None = None
        self.first: str | None = None
        self.second: str | None = None
        self.targets = ThreePhase(0.0, 0.0, 0.0)
        self.t_prev: float | None = None
        self.cycle_start: float | None = None
        self.records: list[CycleRecord] = []
        self.mode_log: list[tuple[float, Mode]] = []
        self.events: list[SwitchEvent] = []
        self.reference_provider = None
        self._record: CycleRecord | None = None
        self._conducted: set = set()
        self._free_energy: float | None = None
        self._trough = False
        self._floor = False

    # ------------------------------------------------------------------
    @property
    def e_target(self) -> float:
        return self.params.peak_link_energy + self.params.eps_energy

    def energy(self, state: CircuitState) -> float:
        return link_energy(state, self.params)

    def _enter(self, mode: Mode, state: CircuitState) -> None:
        if mode != self.mode.next():
            raise RuntimeError(f"illegal mode transition {self.mode.name} -> {mode.name}")
        if self.mode in (Mode.M2, Mode.M4, Mode.M6) and self._free_energy is not None and self._record:
            e0, e1 = self._free_energy, self.energy(state)
            self._record.energy_drift = max(self._record.energy_drift, abs(e1 - e0) / max(e0, 1e-30))
        self.mode = mode
        state.mode = mode
        self.mode_log.append((state.t, mode))
        if self._record is not None:
            self._record.modes.append(mode)
        self._conducted = set(state.paths)
        if mode == Mode.M6:
            self._trough = False
            self._floor = False
        self._free_energy = self.energy(state) if mode in (Mode.M2, Mode.M4, Mode.M6) else None

    # ------------------------------------------------------------------
    def start(self, state: CircuitState) -> None:
        """Begin the first cycle (the link is expected to sit at its peak)."""
        self.mode = Mode.M6
        state.mode = Mode.M6
        self._begin_cycle(state)

    def _begin_cycle(self, state: CircuitState) -> None:
        t = state.t
        if self.cycle_start is not None:
            self.t_prev = t - self.cycle_start
        rec = self._record
        if rec is not None:
            rec.duration = t - rec.t_start
            rec.peak_voltage = state.v_link
            self.records.append(rec)
        if self.reference_provider is not None:
            self.i_ref = self.reference_provider(t, self.t_prev)
        i_ref = self.i_ref
        t_ref = self.t_prev if self.t_prev else estimate_cycle_time(self.params, i_ref, state.v_out)
        self.targets = charge_targets(i_ref, t_ref)
        try:
            self.plan = select_conduction_set(i_ref, state.v_cf)
        except DegenerateReference as exc:
            self.plan = exc.plan
        except AllZeroReference:
            self.plan = None
        skipped = self.plan is not None and not _has_headroom(self.plan, state)
        recovery = False
        if skipped:
            # gating would turn a forward-biased switch on hard; idle the input
            # stage, or refill a depleted link through a pair that has headroom
            found = recovery_plan(state, self.params)
            if found is None:
                log.debug("t=%.9g: no link headroom, input stage idle this cycle", t)
                self.plan, self.targets = None, ThreePhase(0.0, 0.0, 0.0)
            else:
                self.plan, self.targets = found
                skipped, recovery = False, True
        self.first = self.plan.first if self.plan else None
        self.second = self.plan.second if self.plan else None
        state.x[QC:QC + 3] = 0.0
        self.cycle_start = t
        self._record = CycleRecord(t, t_ref, i_ref, self.targets,
                                   v_ll_max=max(abs(v) for v in line_line_voltages(state.v_cf)),
                                   v_link_start=state.v_link, skipped=skipped, recovery=recovery)
        state.gates = self.plan.gates if self.plan else frozenset()
        self._enter(Mode.M1, state)

    def _close_charge(self, state: CircuitState) -> None:
        rec = self._record
        q = state.cycle_charge
        rec.charge = q
        scale = self.params.i_rated_peak * rec.t_ref
        rec.charge_error = max(abs(a - b) for a, b in zip(q, rec.targets)) / scale

    # ------------------------------------------------------------------
    def _charge_row(self, phase: str) -> tuple[np.ndarray, float]:
        k = PHASES.index(phase)
        target = self.targets[k]
        row = np.zeros(NX)
        row[QC + k] = math.copysign(1.0, target)
        return row, -abs(target)

    def guards(self, state: CircuitState) -> list[tuple[str, np.ndarray, np.ndarray, float]]:
        """Sequencer guard functions ``G x + H x^2 + c`` for the active mode."""
        zero = np.zeros(NX)
        out = []
        if self.mode == Mode.M1 and self.plan is not None:
            # either pair may conduct first if the pair voltages cross
            for path in (self.first, self.second):
                if path:
                    row, c = self._charge_row(self.plan.minority(path))
                    out.append(("charge1", row, zero, c))
        elif self.mode == Mode.M3 and self.plan is not None and self.second:
            row, c = self._charge_row(self.plan.minority(self.second))
            out.append(("charge2", row, zero, c))
        elif self.mode == Mode.M5:
            h = np.zeros(NX)
            h[VL] = -0.5 * self.params.C_link
            h[IM] = -0.5 * self.params.L_m
            out.append(("energy", zero, h, self.e_target))
        elif self.mode == Mode.M6:
            row = np.zeros(NX)
            row[IM] = 1.0
            out.append(("peak", row, zero, 0.0))
        if self.mode in (Mode.M1, Mode.M2, Mode.M3) and self.plan is not None and not self._floor:
            # a phase pair below -v_out would drag the link past the output clamp
            row = np.zeros(NX)
            row[VL] = -1.0
            row[VO] = -1.0
            out.append(("floor", row, zero, 0.0))
        if self.mode in (Mode.M1, Mode.M2, Mode.M3, Mode.M4) and not self._trough:
            row = np.zeros(NX)
            row[IM] = -1.0
            out.append(("trough", row, zero, 0.0))
        return out

    def _charge_met(self, state: CircuitState, path: str) -> bool:
        row, c = self._charge_row(self.plan.minority(path))
        return float(row @ state.x) + c >= GUARD_RTOL * c

    # ------------------------------------------------------------------
    def on_guard(self, label: str, state: CircuitState) -> None:
        if label == "peak" and self.mode == Mode.M6:
            if state.v_link > 0.0:
                self._begin_cycle(state)
        elif label == "floor":
            # end input conduction here so the output switch takes over at zero voltage
            self._floor = True
        elif label == "trough" and state.v_link < 0.0:
            # the link swung through its negative extreme: this cycle is short of energy
            self._trough = True

    def react(self, state: CircuitState, events: list[SwitchEvent]) -> bool:
        """Apply every transition whose condition holds now.  Returns True if
        gates changed (conduction must then be re-settled)."""
        if events:
            self.events.extend(events)
            if self._record is not None:
                for ev in events:
                    if ev.switch_id != "Qo":
                        self._record.zvs_worst = max(self._record.zvs_worst, abs(ev.v_across))
        self._conducted |= set(state.paths)
        if self._trough and any(path != "o" for path in state.paths):
            # input conduction resumed after the swing, so energy is flowing in again
            self._trough = False
        gates_before = state.gates
        for _ in range(8):
            gates = state.gates
            # a gate change must be settled by the circuit before the next transition
            if not self._transition(state) or state.gates != gates:
                break
        return state.gates != gates_before

    def _stopped(self, state: CircuitState, path: str | None) -> bool:
        return path is not None and path in self._conducted and path not in state.paths

    def _transition(self, state: CircuitState) -> bool:
        m, plan = self.mode, self.plan
        if m == Mode.M1:
            if plan is None:
                self._enter(Mode.M2, state)
                return True
            if self._floor:
                self._record.shortfall = True
                state.gates = frozenset()
                self._enter(Mode.M2, state)
                return True
            met = [p for p in (self.first, self.second) if p and self._charge_met(state, p)]
            if met:
                done = met[0]
            else:
                stopped = [p for p in (self.first, self.second) if self._stopped(state, p)]
                if not stopped and not (self._trough and not state.paths):
                    return False
                self._record.shortfall = True
                done = stopped[0] if stopped else self.first
            if done != self.first:
                self.first, self.second = self.second, self.first
            state.gates = state.gates - {plan.selection[plan.minority(done)]}
            self._enter(Mode.M2, state)
            return True
        elif m == Mode.M2:
            if plan is None or self.second is None or self.second in state.paths or self._trough or self._floor:
                self._enter(Mode.M3, state)
                return True
        elif m == Mode.M3:
            done = plan is None or self.second is None
            if not done:
                met = self._charge_met(state, self.second)
                if not met and (self._stopped(state, self.second) or self._floor
                                or (self._trough and self.second not in state.paths)):
                    self._record.shortfall = True
                    met = True
                done = met
            if done:
                self._close_charge(state)
                state.gates = frozenset({"Qo"})
                self._enter(Mode.M4, state)
                return True
        elif m == Mode.M4:
            if "o" in state.paths or self._trough:
                if self._trough and self._record is not None:
                    self._record.shortfall = True
                self._enter(Mode.M5, state)
                return True
        elif m == Mode.M5:
            if (self.energy(state) <= self.e_target * (1.0 + GUARD_RTOL) or self._stopped(state, "o")
                    or (self._trough and "o" not in state.paths)):
                state.gates = frozenset()
                self._enter(Mode.M6, state)
                return True
        return False

    def step(self, state: CircuitState, i_ref: ThreePhase, events: list[SwitchEvent]) -> tuple[frozenset, Mode]:
        """Process measurements and events at the current instant.

        ``i_ref`` is latched at the next cycle start.  Returns the gate
        command set and the active mode; the caller re-settles conduction
        when the gates changed.
        """
        self.i_ref = i_ref
        self.react(state, events)
        return state.gates, self.mode

    def check_timeout(self, t: float) -> None:
        if self.cycle_start is not None and t - self.cycle_start > self.params.max_cycle:
            raise GuardTimeout(t, self.mode, self.params.max_cycle)
