"""Reference-frame transforms and the synchronous-frame PLL.

Convention used throughout the package: the grid voltage space vector is
aligned with the **q-axis**.  A balanced positive-sequence set in phase with
the grid voltage therefore maps to ``d = 0, q = amplitude``; ``q`` carries
active power and ``d`` carries reactive power (``d > 0`` for a lagging
current).  Scaling is amplitude-invariant, so ``q = 2`` reads as a 2 A peak
phase current.

    q = 2/3 * (a cos(th) + b cos(th - 2pi/3) + c cos(th + 2pi/3))
    d = 2/3 * (a sin(th) + b sin(th - 2pi/3) + c sin(th + 2pi/3))
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

TWO_PI = 2.0 * math.pi
_SHIFT = TWO_PI / 3.0
ZERO_SEQUENCE_TOL = 1e-6


class ThreePhase(NamedTuple):
    """Instantaneous a/b/c values of a grid quantity (V or A)."""

    a: float
    b: float
    c: float

    def __add__(self, other):  # type: ignore[override]
        return ThreePhase(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other):
        return ThreePhase(self.a - other.a, self.b - other.b, self.c - other.c)

    def scale(self, k: float) -> ThreePhase:
        return ThreePhase(k * self.a, k * self.b, k * self.c)

    @property
    def zero_sequence(self) -> float:
        return (self.a + self.b + self.c) / 3.0


class DqPair(NamedTuple):
    """Synchronous-frame components (q-aligned, amplitude-invariant)."""

    d: float
    q: float

    def __add__(self, other):  # type: ignore[override]
        return DqPair(self.d + other.d, self.q + other.q)

    def __sub__(self, other):
        return DqPair(self.d - other.d, self.q - other.q)

    @property
    def magnitude(self) -> float:
        return math.hypot(self.d, self.q)


def wrap_angle(theta: float) -> float:
    """Wrap an angle into [0, 2pi)."""
    w = math.fmod(theta, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2pi
    return 0.0 if w >= TWO_PI else w


def abc_to_dq(x: ThreePhase, theta: float) -> DqPair:
    """Project an abc quantity onto the q-aligned rotating frame at angle ``theta``.

    The zero-sequence part is discarded; a warning is issued when it exceeds
    ``ZERO_SEQUENCE_TOL`` of the largest phase value because a three-wire
    converter cannot carry it.
    """
    a, b, c = x
    z = (a + b + c) / 3.0
    base = max(abs(a), abs(b), abs(c))
    if base > 0.0 and abs(z) > ZERO_SEQUENCE_TOL * base:
        warnings.warn(
            f"zero-sequence component {z:.3g} discarded in abc_to_dq",
            RuntimeWarning,
            stacklevel=2,
        )
    ca, cb, cc = math.cos(theta), math.cos(theta - _SHIFT), math.cos(theta + _SHIFT)
    sa, sb, sc = math.sin(theta), math.sin(theta - _SHIFT), math.sin(theta + _SHIFT)
    q = (2.0 / 3.0) * (a * ca + b * cb + c * cc)
    d = (2.0 / 3.0) * (a * sa + b * sb + c * sc)
    return DqPair(d, q)


def dq_to_abc(x: DqPair, theta: float) -> ThreePhase:
    """Inverse of :func:`abc_to_dq` for zero-sequence-free quantities."""
    d, q = x
    a = q * math.cos(theta) + d * math.sin(theta)
    b = q * math.cos(theta - _SHIFT) + d * math.sin(theta - _SHIFT)
    # closing the set this way keeps a + b + c == 0 to the last bit
    c = -a - b
    return ThreePhase(a, b, c)


def balanced(amplitude: float, angle: float) -> ThreePhase:
    """Balanced positive-sequence set ``amplitude * cos(angle - k 2pi/3)``."""
    return ThreePhase(
        amplitude * math.cos(angle),
        amplitude * math.cos(angle - _SHIFT),
        amplitude * math.cos(angle + _SHIFT),
    )


# --------------------------------------------------------------------------
# Phase-locked loop
# --------------------------------------------------------------------------


class PllState(NamedTuple):
    theta: float = 0.0
    omega: float = 0.0
    integrator: float = 0.0


@dataclass(frozen=True)
class PllGains:
    """SRF-PLL loop filter gains.

    The error fed to the PI is the d-axis voltage normalised by the measured
    amplitude, so the small-signal loop is ``s^2 + kp s + ki`` independent of
    grid voltage.
    """

    kp: float
    ki: float
    omega_nominal: float = TWO_PI * 60.0

    @classmethod
    def from_bandwidth(
        cls, bandwidth_hz: float = 20.0, damping: float = 0.707, f_nominal: float = 60.0
    ) -> PllGains:
        wn = TWO_PI * bandwidth_hz
        return cls(kp=2.0 * damping * wn, ki=wn * wn, omega_nominal=TWO_PI * f_nominal)


DEFAULT_PLL_GAINS = PllGains.from_bandwidth()


def pll_error(v_grid: ThreePhase, theta: float) -> float:
    """Normalised orthogonal-axis voltage, ~ sin(theta - grid angle)."""
    v = abc_to_dq(v_grid, theta)
    amp = v.magnitude
    return v.d / amp if amp > 0.0 else 0.0


def pll_step(
    v_grid: ThreePhase, state: PllState, dt: float, gains: PllGains = DEFAULT_PLL_GAINS
) -> PllState:
    """Advance the SRF-PLL by one sample of length ``dt``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    err = pll_error(v_grid, state.theta)
    integrator = state.integrator + gains.ki * err * dt
    omega = gains.omega_nominal - (gains.kp * err + integrator)
    theta = wrap_angle(state.theta + omega * dt)
    return PllState(theta, omega, integrator)
