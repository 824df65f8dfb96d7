"""Frequency-domain design helpers and spectral analysis.

Transfer functions are kept as ratios of real polynomials in ``s`` with
coefficients in ascending powers.  The filter plant is
``G_p = 1/(L C s^2 + r_s C s + 1)``, the damping feedback is
``k s/(1 + s/w_c)`` and the inner damped loop is ``G_p/(1 + G_p HPF)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import signal
from scipy.optimize import brentq

from .params import DomainError

CANCEL_TOL = 1e-9


class DegenerateSystem(ValueError):
    """A closed-loop denominator vanished identically."""


class NoFundamental(ValueError):
    """The fundamental component is below the noise floor."""


def _trim(c: np.ndarray) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.nonzero(c)[0]
    return c[: nz[-1] + 1] if len(nz) else np.zeros(1)


@dataclass(frozen=True, eq=False)
class RationalTF:
    """``num(s)/den(s)`` with ascending coefficient arrays."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self) -> None:
        num, den = _trim(self.num), _trim(self.den)
        if not np.any(den):
            raise DegenerateSystem("denominator is identically zero")
        lead = den[np.nonzero(den)[0][0]]
        object.__setattr__(self, "num", num / lead)
        object.__setattr__(self, "den", den / lead)

    @classmethod
    def constant(cls, value: float) -> RationalTF:
        return cls(np.array([value]), np.array([1.0]))

    def __call__(self, s):
        return P.polyval(s, self.num) / P.polyval(s, self.den)

    def freq(self, f):
        """Complex response at ``s = j 2 pi f``."""
        return self(2j * np.pi * np.asarray(f, dtype=float))

    def __mul__(self, other: RationalTF) -> RationalTF:
        return RationalTF(P.polymul(self.num, other.num), P.polymul(self.den, other.den)).reduced()

    def __add__(self, other: RationalTF) -> RationalTF:
        num = P.polyadd(P.polymul(self.num, other.den), P.polymul(other.num, self.den))
        return RationalTF(num, P.polymul(self.den, other.den)).reduced()

    @property
    def is_zero(self) -> bool:
        return not np.any(self.num)

    def poles(self) -> np.ndarray:
        return P.polyroots(self.den) if len(self.den) > 1 else np.zeros(0, dtype=complex)

    def zeros(self) -> np.ndarray:
        return P.polyroots(self.num) if len(self.num) > 1 else np.zeros(0, dtype=complex)

    def reduced(self, tol: float = CANCEL_TOL) -> RationalTF:
        """Cancel pole/zero pairs that coincide within ``tol`` (relative)."""
        if self.is_zero:
            return RationalTF(np.zeros(1), np.ones(1))
        num, den = self.num, self.den
        for _ in range(len(den)):
            zs, ps = (P.polyroots(num) if len(num) > 1 else []), (P.polyroots(den) if len(den) > 1 else [])
            hit = None
            for z in zs:
                for p in ps:
                    if abs(z - p) <= tol * max(1.0, abs(p)):
                        hit = p
                        break
                if hit is not None:
                    break
            if hit is None:
                break
            if abs(hit.imag) <= tol * max(1.0, abs(hit)):
                factor = np.array([-hit.real, 1.0])
            else:
                factor = np.array([abs(hit) ** 2, -2.0 * hit.real, 1.0])
            num = _trim(P.polydiv(num, factor)[0])
            den = _trim(P.polydiv(den, factor)[0])
        return RationalTF(num, den)

    def to_scipy(self) -> signal.TransferFunction:
        return signal.TransferFunction(self.num[::-1], self.den[::-1])


# --------------------------------------------------------------------------
# Building blocks
# --------------------------------------------------------------------------


def gp_tf(L: float, C: float, r_s: float) -> RationalTF:
    """Filter current gain ``i_g/i_w = 1/(L C s^2 + r_s C s + 1)``."""
    if not (L > 0.0 and C > 0.0):
        raise DomainError("L and C must be positive")
    if r_s < 0.0:
        raise DomainError("r_s must be non-negative")
    return RationalTF(np.array([1.0]), np.array([1.0, r_s * C, L * C]))


def hpf_tf(k: float, omega_c: float) -> RationalTF:
    if not omega_c > 0.0:
        raise DomainError("omega_c must be positive")
    return RationalTF(np.array([0.0, k]), np.array([1.0, 1.0 / omega_c]))


def damping_gain(xi: float, L: float, C: float) -> float:
    """HPF gain ``k`` giving damping ratio ``xi``: ``k = 2 xi sqrt(L C)``."""
    if not (xi > 0.0 and L > 0.0 and C > 0.0):
        raise DomainError("xi, L and C must be positive")
    return 2.0 * xi * math.sqrt(L * C)


def damping_ratio(k: float, L: float, C: float) -> float:
    if not (k >= 0.0 and L > 0.0 and C > 0.0):
        raise DomainError("k must be >= 0 and L, C positive")
    return k / (2.0 * math.sqrt(L * C))


def closed_inner_loop(gp: RationalTF, hpf: RationalTF) -> RationalTF:
    """``gp / (1 + gp * hpf)`` reduced; returns ``gp`` itself when hpf is zero."""
    if hpf.is_zero:
        return gp
    num = P.polymul(gp.num, hpf.den)
    den = P.polyadd(P.polymul(gp.den, hpf.den), P.polymul(gp.num, hpf.num))
    if not np.any(_trim(den)):
        raise DegenerateSystem("closed-loop denominator is identically zero")
    return RationalTF(num, den).reduced()


def pi_tf(K_p: float, K_i: float) -> RationalTF:
    """``K_p + K_i/s``."""
    return RationalTF(np.array([K_i, K_p]), np.array([0.0, 1.0]))


def loop_gain(gig: RationalTF, gi: RationalTF) -> RationalTF:
    return gig * gi


def feedback(loop: RationalTF) -> RationalTF:
    """Unity-feedback closed loop ``L / (1 + L)``."""
    den = P.polyadd(loop.den, loop.num)
    if not np.any(_trim(den)):
        raise DegenerateSystem("closed-loop denominator is identically zero")
    return RationalTF(loop.num, den).reduced()


def is_stable(tf: RationalTF) -> bool:
    return bool(np.all(tf.poles().real < 0.0))


def table_systems(params) -> dict[str, RationalTF]:
    """The standard systems for one parameter set, keyed by short name."""
    p = params
    gp = gp_tf(p.L_f, p.C_f, p.r_s)
    hpf = hpf_tf(p.k_damp, p.omega_hpf)
    gig = closed_inner_loop(gp, hpf)
    gi = pi_tf(p.K_p, p.K_i)
    return {
        "gp": gp,
        "hpf": hpf,
        "gig": gig,
        "gi": gi,
        "loop": loop_gain(gig, gi),
        "inner": gp * hpf,
        "closed": feedback(loop_gain(gig, gi)),
    }


# --------------------------------------------------------------------------
# Bode
# --------------------------------------------------------------------------


class BodePoint(NamedTuple):
    f: float
    magnitude_db: float
    phase_deg: float
    pole_on_axis: bool = False


def bode(tf: RationalTF, f_min: float, f_max: float, n: int, pole_tol: float = 1e-12) -> list[BodePoint]:
    """Log-spaced sweep at ``s = j 2 pi f`` with unwrapped phase."""
    if not (0.0 < f_min < f_max) or n < 2:
        raise ValueError("need 0 < f_min < f_max and n >= 2")
    f = np.geomspace(f_min, f_max, int(n))
    s = 2j * np.pi * f
    num = P.polyval(s, tf.num)
    den = P.polyval(s, tf.den)
    scale = np.sum(np.abs(tf.den) * np.abs(s)[:, None] ** np.arange(len(tf.den)), axis=1)
    pole = np.abs(den) <= pole_tol * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(pole, np.inf, num / np.where(pole, 1.0, den))
        mag = 20.0 * np.log10(np.abs(h))
    ph = np.angle(np.where(pole, 1.0, h))
    ph = np.degrees(np.unwrap(ph))
    return [BodePoint(float(a), float(b), float(c), bool(d)) for a, b, c, d in zip(f, mag, ph, pole)]


def peak(tf: RationalTF, f_min: float, f_max: float, n: int = 20001) -> tuple[float, float]:
    """Frequency and magnitude (dB) of the largest gain on a dense sweep."""
    pts = bode(tf, f_min, f_max, n)
    best = max(pts, key=lambda b: b.magnitude_db)
    return best.f, best.magnitude_db


def crossovers(tf: RationalTF, f_min: float = 0.1, f_max: float = 1e6, n: int = 4000) -> list[float]:
    """All frequencies in the range where ``|tf| = 1``."""
    f = np.geomspace(f_min, f_max, n)
    g = np.log(np.abs(tf.freq(f)))
    out = []
    fun = lambda x: math.log(abs(tf.freq(x)))  # noqa: E731
    for j in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]:
        out.append(brentq(fun, f[j], f[j + 1], xtol=1e-12, rtol=1e-12))
    return out


def crossover_frequency(tf: RationalTF, **kw) -> float:
    xs = crossovers(tf, **kw)
    if not xs:
        raise ValueError("no gain crossover in range")
    return xs[-1]


def phase_margin(tf: RationalTF, **kw) -> float:
    fc = crossover_frequency(tf, **kw)
    return 180.0 + math.degrees(float(np.angle(tf.freq(fc))))


def step_settling_time(tf: RationalTF, band: float = 0.05, t_end: float | None = None, n: int = 20001) -> float:
    """Settling time of the unit-step response into ``band`` of its final value."""
    if t_end is None:
        slow = min(abs(p.real) for p in tf.poles()) if len(tf.poles()) else 1.0
        t_end = 12.0 / slow
    t = np.linspace(0.0, t_end, n)
    t, y = signal.step(tf.to_scipy(), T=t)
    y_final = float(tf(0.0).real)
    out = np.abs(y - y_final) > band * abs(y_final)
    if not out.any():
        return 0.0
    return float(t[min(np.nonzero(out)[0][-1] + 1, len(t) - 1)])


# --------------------------------------------------------------------------
# Spectrum and THD
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    """One-sided spectrum of a real record; amplitudes are peak values.

    ``sum(amplitudes**2) / 2`` equals the mean square of the mean-removed
    record.
    """

    freqs: np.ndarray
    amplitudes: np.ndarray
    fundamental_index: int
    periods: int

    @property
    def fundamental(self) -> float:
        return float(self.amplitudes[self.fundamental_index])

    def harmonic(self, h: int) -> float:
        j = h * self.periods
        return float(self.amplitudes[j]) if j < len(self.amplitudes) else 0.0


def spectrum(samples, f_sample: float, f_fundamental: float) -> Spectrum:
    """Rectangular-window FFT of a record spanning whole fundamental periods."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two samples")
    periods_f = n * f_fundamental / f_sample
    periods = int(round(periods_f))
    if periods < 1 or abs(periods_f - periods) > 1e-6 * max(1.0, periods_f):
        raise ValueError(f"record spans {periods_f:.6g} fundamental periods; an integer is required")
    X = np.fft.rfft(x - x.mean())
    amp = 2.0 * np.abs(X) / n
    amp[0] = 0.0
    if n % 2 == 0:
        amp[-1] = math.sqrt(2.0) * abs(X[-1]) / n
    freqs = np.fft.rfftfreq(n, 1.0 / f_sample)
    return Spectrum(freqs, amp, periods, periods)


class ThdReport(NamedTuple):
    thd: float  # percent, all non-fundamental content
    harmonic_thd: float  # percent, integer harmonics only
    interharmonic: float  # percent, content between harmonic bins
    fundamental: float
    harmonics: tuple  # per-harmonic amplitudes for h = 2..n


def thd_report(samples, f_sample: float, f_fundamental: float, n_harmonics: int = 50,
               noise_floor: float = 1e-9) -> ThdReport:
    """Total distortion up to ``(n + 1/2) f0`` with a per-harmonic breakdown.

    Bins within half a bin of a harmonic count as that harmonic; the rest is
    interharmonic content.  Both are included in ``thd``.
    """
    if n_harmonics < 1:
        raise ValueError("n_harmonics must be >= 1")
    if f_sample <= 2.0 * n_harmonics * f_fundamental:
        raise ValueError("sampling rate too low for the requested number of harmonics")
    sp = spectrum(samples, f_sample, f_fundamental)
    a1 = sp.fundamental
    scale = float(np.max(np.abs(samples))) if len(samples) else 0.0
    if a1 <= noise_floor * max(scale, 1e-300) or a1 == 0.0:
        raise NoFundamental("fundamental amplitude is below the noise floor")
    hi = int(math.floor((n_harmonics + 0.5) * sp.periods))
    band = sp.amplitudes[1:hi + 1].copy()
    idx = np.arange(1, hi + 1)
    band[idx == sp.periods] = 0.0
    harm_mask = (idx % sp.periods == 0) & (idx != sp.periods)
    harm = band[harm_mask]
    inter = band[~harm_mask]
    total = math.sqrt(float(np.sum(band ** 2))) / a1 * 100.0
    return ThdReport(
        total,
        math.sqrt(float(np.sum(harm ** 2))) / a1 * 100.0,
        math.sqrt(float(np.sum(inter ** 2))) / a1 * 100.0,
        a1,
        tuple(sp.harmonic(h) for h in range(2, n_harmonics + 1)),
    )


def thd(samples, f_sample: float, f_fundamental: float, n_harmonics: int = 50) -> float:
    """Total harmonic distortion in percent (see :func:`thd_report`)."""
    return thd_report(samples, f_sample, f_fundamental, n_harmonics).thd


def dominant_frequency(samples, f_sample: float, f_fundamental: float) -> float:
    """Frequency of the largest non-fundamental, non-dc bin."""
    sp = spectrum(samples, f_sample, f_fundamental)
    a = sp.amplitudes.copy()
    a[sp.fundamental_index] = 0.0
    return float(sp.freqs[int(np.argmax(a))])
