"""Converter, controller and simulator constants.

Defaults reproduce the 500 W prototype table (80 V line-line RMS, 3.6 A,
425 uH / 100 nF link, 1.6 mH / 40 uF input filter, k = 0.0003, 3 kHz HPF,
Kp = 0.1, Ki = 800).  Values not given there (filter resistance, link peak,
output stage, control rate) are engineering choices and are all
overridable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

OUTPUT_MODELS = ("source", "rc")
DAMPING_FRAMES = ("dq", "abc")
FIDELITIES = ("switch", "averaged")


class ConfigError(ValueError):
    """Raised for parameter sets that violate a physical or design invariant."""


class DomainError(ValueError):
    """Raised when a formula is evaluated outside its domain (e.g. L <= 0)."""


LINK_PEAK_MARGIN = 1.3
_AUTO = ("v_link_peak", "eps_zvs", "eps_energy", "i_limit")


@dataclass(frozen=True)
class ConverterParams:
    # grid and ratings
    v_grid_ll_rms: float = 80.0
    f_grid: float = 60.0
    grid_phase: float = 0.0
    i_rated: float = 3.6
    v_out_min: float = 50.0
    v_out_max: float = 150.0
    # power stage
    L_m: float = 425e-6
    C_link: float = 100e-9
    L_f: float = 1.6e-3
    C_f: float = 40e-6
    r_s: float = 0.1
    v_link_peak: float | None = None
    # output stage: stiff dc source or capacitor with resistive load
    output_model: str = "source"
    v_out: float = 100.0
    C_out: float = 470e-6
    R_load: float = 50.0
    # current control and active damping
    k_damp: float = 3e-4
    f_hpf: float = 3000.0
    K_p: float = 0.1
    K_i: float = 800.0
    i_limit: float | None = None
    damping_frame: str = "dq"
    # outer (output voltage) loop
    K_p_v: float = 0.04
    K_i_v: float = 3.0
    # pll
    pll_bandwidth: float = 20.0
    pll_damping: float = 0.707
    # simulator
    dt: float = 100e-9
    f_control: float = 20e3
    eps_zvs: float | None = None
    eps_energy: float | None = None
    max_cycle: float = 2e-3
    _auto: frozenset = field(default=frozenset(), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_auto", frozenset(n for n in _AUTO if getattr(self, n) is None))
        if self.v_link_peak is None:
            vpk = LINK_PEAK_MARGIN * max(math.sqrt(2.0) * self.v_grid_ll_rms, self.v_out)
            object.__setattr__(self, "v_link_peak", vpk)
        if self.eps_zvs is None:
            object.__setattr__(self, "eps_zvs", 0.01 * self.v_link_peak)
        if self.eps_energy is None:
            object.__setattr__(self, "eps_energy", 1e-3 * self.peak_link_energy)
        if self.i_limit is None:
            object.__setattr__(self, "i_limit", 2.0 * math.sqrt(2.0) * self.i_rated)
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        positive = (
            "v_grid_ll_rms", "f_grid", "i_rated", "v_out_min", "v_out_max", "L_m",
            "C_link", "L_f", "C_f", "r_s", "v_link_peak", "v_out", "C_out",
            "R_load", "f_hpf", "dt", "f_control", "eps_zvs", "eps_energy",
            "max_cycle", "pll_bandwidth", "pll_damping", "i_limit",
        )
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigError(f"{name} must be finite and > 0, got {value!r}")
        for name in ("k_damp", "K_p", "K_i", "K_p_v", "K_i_v"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ConfigError(f"{name} must be finite and >= 0, got {value!r}")
        if self.v_out_min > self.v_out_max:
            raise ConfigError("v_out_min must not exceed v_out_max")
        if self.output_model not in OUTPUT_MODELS:
            raise ConfigError(f"output_model must be one of {OUTPUT_MODELS}")
        if self.damping_frame not in DAMPING_FRAMES:
            raise ConfigError(f"damping_frame must be one of {DAMPING_FRAMES}")
        if self.v_link_peak <= self.v_ll_peak:
            raise ConfigError(
                f"v_link_peak {self.v_link_peak:.4g} V must exceed the peak line-line "
                f"voltage {self.v_ll_peak:.4g} V"
            )
        if self.v_link_peak <= self.v_out:
            raise ConfigError("v_link_peak must exceed v_out so the link can discharge")
        if self.f_hpf < 2.0 * self.f_res_filter:
            raise ConfigError(
                f"f_hpf {self.f_hpf:.4g} Hz is below twice the filter resonance "
                f"{self.f_res_filter:.4g} Hz"
            )
        if self.ctrl_every < 1 or abs(self.ctrl_every * self.dt * self.f_control - 1.0) > 1e-6:
            raise ConfigError("1/f_control must be an integer multiple of dt")

    # ------------------------------------------------------------------
    @property
    def v_ll_peak(self) -> float:
        return math.sqrt(2.0) * self.v_grid_ll_rms

    @property
    def v_phase_peak(self) -> float:
        return self.v_ll_peak / math.sqrt(3.0)

    @property
    def omega_grid(self) -> float:
        return 2.0 * math.pi * self.f_grid

    @property
    def omega_hpf(self) -> float:
        return 2.0 * math.pi * self.f_hpf

    @property
    def f_res_filter(self) -> float:
        return 1.0 / (2.0 * math.pi * math.sqrt(self.L_f * self.C_f))

    @property
    def f_res_link(self) -> float:
        return 1.0 / (2.0 * math.pi * math.sqrt(self.L_m * self.C_link))

    @property
    def peak_link_energy(self) -> float:
        return 0.5 * self.C_link * self.v_link_peak ** 2

    @property
    def i_rated_peak(self) -> float:
        return math.sqrt(2.0) * self.i_rated

    @property
    def rated_power(self) -> float:
        return math.sqrt(3.0) * self.v_grid_ll_rms * self.i_rated

    @property
    def ctrl_every(self) -> int:
        return int(round(1.0 / (self.f_control * self.dt)))

    @property
    def t_control(self) -> float:
        return self.ctrl_every * self.dt

    def replace(self, **changes) -> ConverterParams:
        """Copy with changes; auto-derived fields are recomputed unless given."""
        base = {f.name: getattr(self, f.name) for f in fields(self) if f.init}
        for name in self._auto:
            base[name] = None
        base.update(changes)
        return ConverterParams(**base)


PARAM_FIELDS = tuple(f.name for f in fields(ConverterParams) if f.init)


def coerce_field(name: str, text: str):
    """Parse a config string into the type of ConverterParams field ``name``."""
    if name not in PARAM_FIELDS:
        raise ConfigError(f"unknown parameter {name!r}")
    if name in ("output_model", "damping_frame"):
        return text.strip()
    text = text.strip()
    if text.lower() in ("none", "auto", ""):
        if name in _AUTO:
            return None
        raise ConfigError(f"{name} requires a value")
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r} as a number") from exc
