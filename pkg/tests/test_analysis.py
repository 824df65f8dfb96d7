from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from aclink.analysis import (
    DegenerateSystem,
    NoFundamental,
    RationalTF,
    bode,
    closed_inner_loop,
    crossover_frequency,
    crossovers,
    damping_gain,
    damping_ratio,
    dominant_frequency,
    gp_tf,
    hpf_tf,
    is_stable,
    loop_gain,
    peak,
    phase_margin,
    pi_tf,
    spectrum,
    step_settling_time,
    table_systems,
    thd,
    thd_report,
)
from aclink.params import ConverterParams, DomainError

L_F, C_F, R_S = 1.6e-3, 40e-6, 0.1
K, WC = 3e-4, 2 * math.pi * 3000.0
F_RES = 629.1151513060879
# roots of (LC s^2 + r C s + 1)(1 + s/wc) + k s, from numpy.roots
GIG_POLES = [complex(-12314.77196061, 0.0), complex(-3298.64198046, -3610.44376411),
             complex(-3298.64198046, 3610.44376411)]


def _scipy_mag(num_desc, den_desc, f):
    _, h = signal.freqs(num_desc, den_desc, worN=2 * np.pi * np.asarray(f))
    return np.abs(h)


# --------------------------------------------------------------------------
# RationalTF
# --------------------------------------------------------------------------


def test_normalisation_and_arithmetic():
    tf = RationalTF(np.array([2.0]), np.array([4.0, 2.0]))
    assert tf.den[0] == 1.0
    assert tf(0.0) == pytest.approx(0.5)
    s = 1j * 3.0
    a, b = gp_tf(L_F, C_F, R_S), hpf_tf(K, WC)
    assert (a * b)(s) == pytest.approx(a(s) * b(s))
    assert (a + b)(s) == pytest.approx(a(s) + b(s))


def test_lowest_nonzero_denominator_normalised():
    tf = pi_tf(0.1, 800.0)
    assert tf.den[0] == 0.0 and tf.den[1] == 1.0


def test_zero_denominator_is_degenerate():
    with pytest.raises(DegenerateSystem):
        RationalTF(np.array([1.0]), np.array([0.0, 0.0]))


def test_reduction_cancels_common_factor():
    # (s + 2)(s + 3) / ((s + 2)(s + 5))
    num = np.polynomial.polynomial.polyfromroots([-2.0, -3.0])
    den = np.polynomial.polynomial.polyfromroots([-2.0, -5.0])
    r = RationalTF(num, den).reduced()
    assert len(r.den) == 2 and len(r.num) == 2
    assert r(1.0) == pytest.approx(4.0 / 6.0)


# --------------------------------------------------------------------------
# Plant, damping filter, design rule
# --------------------------------------------------------------------------


@given(st.floats(1e-5, 1e-1), st.floats(1e-7, 1e-3), st.floats(0.0, 10.0))
def test_plant_dc_gain_is_one(L, C, r):
    assert gp_tf(L, C, r)(0.0) == 1.0


def test_plant_domain():
    with pytest.raises(DomainError):
        gp_tf(0.0, C_F, R_S)
    with pytest.raises(DomainError):
        gp_tf(L_F, C_F, -1.0)


def test_lossless_plant_has_pole_on_axis():
    tf = gp_tf(L_F, C_F, 0.0)
    w0 = 2 * math.pi * F_RES
    assert abs(np.polynomial.polynomial.polyval(1j * w0, tf.den)) < 1e-12
    pts = bode(tf, F_RES, 2 * F_RES, 2)
    assert pts[0].pole_on_axis


def test_plant_peak_matches_direct_evaluation():
    f = np.linspace(600.0, 660.0, 60001)
    oracle = _scipy_mag([1.0], [L_F * C_F, R_S * C_F, 1.0], f)
    f_pk, db = peak(gp_tf(L_F, C_F, R_S), 600.0, 660.0, 60001)
    assert db == pytest.approx(20 * math.log10(oracle.max()), abs=1e-6)
    # 1/(r C w0) at resonance: 63.2456 = 36.0206 dB
    assert db == pytest.approx(36.02087135581322, abs=1e-4)
    assert f_pk == pytest.approx(629.0758316091313, abs=0.01)


def test_hpf_response():
    tf = hpf_tf(K, WC)
    assert tf(0.0) == 0.0
    assert abs(tf.freq(1e8)) == pytest.approx(5.654866776461627, rel=1e-6)
    g = tf.freq(3000.0)
    assert abs(g) == pytest.approx(5.654866776461627 / math.sqrt(2.0), rel=1e-12)
    assert math.degrees(np.angle(g)) == pytest.approx(45.0, abs=1e-9)


def test_damping_gain_values():
    assert damping_gain(0.5, L_F, C_F) == pytest.approx(2.5298221281347036e-4, rel=1e-12)
    assert damping_gain(0.593, L_F, C_F) == pytest.approx(3e-4, abs=1e-6)
    assert damping_ratio(3e-4, L_F, C_F) == pytest.approx(0.592927061281571, rel=1e-12)
    with pytest.raises(DomainError):
        damping_gain(0.0, L_F, C_F)


@given(st.floats(1e-3, 10.0))
def test_damping_gain_linear_and_inverse(xi):
    k = damping_gain(xi, L_F, C_F)
    assert damping_gain(2 * xi, L_F, C_F) == pytest.approx(2 * k, rel=1e-15)
    assert damping_ratio(k, L_F, C_F) == pytest.approx(xi, rel=1e-12)


def test_zero_gain_loop_is_plant():
    gp = gp_tf(L_F, C_F, R_S)
    assert closed_inner_loop(gp, hpf_tf(0.0, WC)) is gp


def test_damped_loop_poles_and_peak():
    gp = gp_tf(L_F, C_F, R_S)
    gig = closed_inner_loop(gp, hpf_tf(K, WC))
    poles = sorted(gig.poles(), key=lambda z: (z.real, z.imag))
    for a, b in zip(poles, GIG_POLES):
        assert complex(a) == pytest.approx(complex(b), rel=1e-8)
    assert is_stable(gig)
    _, db_u = peak(gp, 10.0, 1e5)
    _, db_d = peak(gig, 10.0, 1e5)
    assert db_u - db_d > 20.0
    num = [1.0 / WC, 1.0]
    den = np.polyadd(np.polymul([L_F * C_F, R_S * C_F, 1.0], [1.0 / WC, 1.0]), [K, 0.0])
    f = np.geomspace(10.0, 1e5, 20001)
    assert db_d == pytest.approx(20 * math.log10(_scipy_mag(num, den, f).max()), abs=1e-9)


stable_second_order = st.tuples(st.floats(1e-4, 1e-2), st.floats(1e-6, 1e-4), st.floats(0.01, 5.0))


@settings(max_examples=50)
@given(stable_second_order, st.floats(0.0, 1e-3), st.floats(1e3, 1e5), st.integers(0, 2**31 - 1))
def test_closed_loop_identity(plant, k, wc, seed):
    gp = gp_tf(*plant)
    hpf = hpf_tf(k, wc)
    gig = closed_inner_loop(gp, hpf)
    rng = np.random.default_rng(seed)
    s = 1j * 2 * np.pi * rng.uniform(1.0, 1e5, 50)
    direct = gp(s) / (1.0 + gp(s) * hpf(s))
    assert np.max(np.abs(gig(s) / direct - 1.0)) < 1e-9


# --------------------------------------------------------------------------
# Loop gain and Bode sweeps
# --------------------------------------------------------------------------


def test_loop_gain_has_integrator():
    sys_ = table_systems(ConverterParams())
    assert abs(sys_["loop"].freq(1e-6)) > 1e6
    direct = loop_gain(sys_["gig"], pi_tf(0.1, 800.0))
    assert direct.freq(100.0) == pytest.approx(sys_["loop"].freq(100.0), rel=1e-12)


def test_crossovers_match_dense_sweep():
    sys_ = table_systems(ConverterParams())
    loop = sys_["loop"]
    fc = crossover_frequency(loop)
    f = np.geomspace(1.0, 1e5, 400001)
    num = np.polymul([1.0 / WC, 1.0], [0.1, 800.0])
    den = np.polymul(np.polyadd(np.polymul([L_F * C_F, R_S * C_F, 1.0], [1.0 / WC, 1.0]), [K, 0.0]), [1.0, 0.0])
    mag = _scipy_mag(num, den, f)
    j = np.flatnonzero(np.diff(np.sign(mag - 1.0)))[-1]
    assert fc == pytest.approx(f[j], rel=1e-4)
    assert fc == pytest.approx(128.08, abs=0.01)
    inner = crossovers(sys_["inner"])
    assert inner == pytest.approx([359.7, 1071.8], abs=0.1)
    assert fc <= crossover_frequency(sys_["inner"]) / 5.0
    assert phase_margin(loop) == pytest.approx(81.6, abs=0.1)
    assert phase_margin(loop) > 45.0


def test_closed_loop_settling_time():
    closed = table_systems(ConverterParams())["closed"]
    assert is_stable(closed)
    assert step_settling_time(closed) == pytest.approx(3.37e-3, rel=0.01)


def test_bode_constant_and_integrator():
    pts = bode(RationalTF.constant(1.0), 1.0, 1e4, 50)
    assert all(p.magnitude_db == 0.0 and p.phase_deg == 0.0 for p in pts)
    integ = RationalTF(np.array([1.0]), np.array([0.0, 1.0]))
    pts = bode(integ, 1.0, 1e4, 5)
    slopes = [b.magnitude_db - a.magnitude_db for a, b in zip(pts, pts[1:])]
    assert slopes == pytest.approx([-20.0] * 4, abs=0.1)
    assert all(p.phase_deg == pytest.approx(-90.0) for p in pts)


def test_bode_peak_within_one_grid_point():
    pts = bode(gp_tf(L_F, C_F, R_S), 10.0, 1e5, 4001)
    f = np.array([p.f for p in pts])
    j = int(np.argmax([p.magnitude_db for p in pts]))
    k = int(np.argmin(np.abs(f - F_RES)))
    assert abs(j - k) <= 1


def test_bode_phase_is_unwrapped():
    pts = bode(table_systems(ConverterParams())["loop"], 1.0, 1e6, 2000)
    ph = np.array([p.phase_deg for p in pts])
    assert np.max(np.abs(np.diff(ph))) < 30.0


def test_bode_rejects_bad_sweep():
    with pytest.raises(ValueError):
        bode(RationalTF.constant(1.0), 10.0, 1.0, 10)


# --------------------------------------------------------------------------
# Spectrum and THD
# --------------------------------------------------------------------------

FS, F0 = 60e3, 60.0


def _t(periods: int = 6) -> np.ndarray:
    return np.arange(int(round(periods * FS / F0))) / FS


def test_pure_sinusoid_has_zero_thd():
    assert thd(np.sin(2 * np.pi * F0 * _t()), FS, F0) == pytest.approx(0.0, abs=0.01)


def test_square_wave_thd():
    t = _t(1)
    sq = np.where(np.sin(2 * np.pi * F0 * t + 1e-9) >= 0.0, 1.0, -1.0)
    # sqrt(pi^2/8 - 1) = 48.3426 %
    assert thd(sq, FS, F0, n_harmonics=499) == pytest.approx(48.34, abs=0.1)


def test_interharmonic_content_is_counted():
    t = _t()
    x = np.sin(2 * np.pi * F0 * t) + 0.5 * np.sin(2 * np.pi * 630.0 * t)
    rep = thd_report(x, FS, F0)
    assert rep.thd == pytest.approx(50.0, rel=1e-9)
    assert rep.harmonic_thd == pytest.approx(0.0, abs=1e-9)
    assert rep.interharmonic == pytest.approx(50.0, rel=1e-9)
    assert dominant_frequency(x, FS, F0) == pytest.approx(630.0)


def test_spectrum_needs_whole_periods():
    with pytest.raises(ValueError):
        spectrum(np.ones(1001), FS, F0)


def test_no_fundamental():
    t = _t()
    with pytest.raises(NoFundamental):
        thd(np.sin(2 * np.pi * 3 * F0 * t), FS, F0)


def test_thd_rejects_undersampling():
    with pytest.raises(ValueError):
        thd(np.sin(2 * np.pi * F0 * _t()), FS, F0, n_harmonics=600)


signals = st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=8)


def _mix(coefs) -> np.ndarray:
    t = _t(2)
    x = np.sin(2 * np.pi * F0 * t)
    for h, c in enumerate(coefs, start=2):
        x = x + c * np.sin(2 * np.pi * h * 1.37 * F0 * t + h)
    return x


@settings(max_examples=30)
@given(signals, st.floats(1e-3, 1e3))
def test_thd_scale_invariant(coefs, scale):
    x = _mix(coefs)
    a, b = thd(x, FS, F0), thd(scale * x, FS, F0)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


@settings(max_examples=30)
@given(signals)
def test_parseval(coefs):
    x = _mix(coefs)
    sp = spectrum(x, FS, F0)
    ms = float(np.mean((x - x.mean()) ** 2))
    assert float(np.sum(sp.amplitudes ** 2)) == pytest.approx(2.0 * ms, rel=0.01)
