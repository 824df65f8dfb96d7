"""Compiled inner loop: fixed-step trapezoidal stepping of one linear topology.

Runs until a guard function crosses zero upward or ``n`` steps elapse.
Guards have the form ``g(x) = G @ x + H @ (x * x) + c``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NO_HIT = -1
NON_FINITE = -2


@njit(cache=True)
def _source(t, vp, w, phi, out):
    ang = w * t + phi
    out[0] = vp * math.cos(ang)
    out[1] = vp * math.cos(ang - 2.0943951023931953)
    out[2] = vp * math.cos(ang + 2.0943951023931953)


@njit(cache=True)
def _guards(G, H, c, x, out):
    m, n = G.shape
    for i in range(m):
        acc = c[i]
        for j in range(n):
            xj = x[j]
            acc += G[i, j] * xj + H[i, j] * xj * xj
        out[i] = acc


@njit(cache=True)
def advance(Ad, Bd, x, k0, n, dt, vp, w, phi, G, H, c, decim, buf_t, buf_x, pos):
    """Step from global index ``k0`` for at most ``n`` steps.

    Returns ``(steps_done, hit, x, pos)``.  When ``hit >= 0`` the guard with
    that index crossed during step ``k0 + steps_done`` and ``x`` is the state
    at the *start* of that step.  ``hit == NON_FINITE`` flags blow-up.
    """
    nx = x.shape[0]
    m = G.shape[0]
    xp = x.copy()
    xn = np.empty(nx)
    u0 = np.empty(3)
    u1 = np.empty(3)
    us = np.empty(3)
    g0 = np.empty(m)
    g1 = np.empty(m)
    _source(k0 * dt, vp, w, phi, u0)
    _guards(G, H, c, xp, g0)
    cap = buf_t.shape[0]
    for j in range(n):
        k = k0 + j
        _source((k + 1) * dt, vp, w, phi, u1)
        for r in range(3):
            us[r] = u0[r] + u1[r]
        finite = True
        for i in range(nx):
            acc = 0.0
            for jj in range(nx):
                acc += Ad[i, jj] * xp[jj]
            for r in range(3):
                acc += Bd[i, r] * us[r]
            xn[i] = acc
            if not math.isfinite(acc):
                finite = False
        if not finite:
            return j, NON_FINITE, xp, pos
        _guards(G, H, c, xn, g1)
        for i in range(m):
            if g0[i] < 0.0 and g1[i] >= 0.0:
                return j, i, xp, pos
        for i in range(nx):
            xp[i] = xn[i]
        for r in range(3):
            u0[r] = u1[r]
        for i in range(m):
            g0[i] = g1[i]
        if (k + 1) % decim == 0 and pos < cap:
            buf_t[pos] = (k + 1) * dt
            for i in range(nx):
                buf_x[pos, i] = xp[i]
            pos += 1
    return n, NO_HIT, xp, pos
