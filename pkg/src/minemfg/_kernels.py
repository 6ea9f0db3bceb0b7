"""Compiled inner loops for the grid engine.

Kernels take the grid routines as leading arguments:
``interp_u``/``locate_u`` for uniform wealth grids (index arithmetic) and
``interp_g``/``locate_g`` for arbitrary grids (binary search).  The public
wrappers in :mod:`minemfg.core` pick the pair and validate inputs.
"""
import math

import numpy as np
from numba import njit

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
# generous bound on the rounding error of one objective value, relative to
# the magnitude of the values read
ROUND_GUARD = 64 * np.finfo(np.float64).eps


@njit(cache=True)
def locate_u(xs, inv_h, y):
    """``(j, w)`` with ``y = (1-w) xs[j] + w xs[j+1]``; clamps outside the grid."""
    m = xs.shape[0]
    s = (y - xs[0]) * inv_h
    if s <= 0.0:
        return 0, 0.0
    if s >= m - 1:
        return m - 2, 1.0
    j = int(s)
    return j, s - j


@njit(cache=True)
def locate_g(xs, inv_h, y):
    m = xs.shape[0]
    if y <= xs[0]:
        return 0, 0.0
    if y >= xs[m - 1]:
        return m - 2, 1.0
    lo = 0
    hi = m - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if xs[mid] <= y:
            lo = mid
        else:
            hi = mid
    return lo, (y - xs[lo]) / (xs[lo + 1] - xs[lo])


@njit(cache=True)
def interp_u(v, xs, inv_h, y):
    m = xs.shape[0]
    s = (y - xs[0]) * inv_h
    if s <= 0.0:
        return v[0]
    if s >= m - 1:
        return v[m - 1]
    j = int(s)
    return v[j] + (s - j) * (v[j + 1] - v[j])


@njit(cache=True)
def interp_g(v, xs, inv_h, y):
    j, w = locate_g(xs, inv_h, y)
    return v[j] + w * (v[j + 1] - v[j])


@njit(cache=True)
def win_prob(a, hvals, hw, M, eps, dt):
    if a <= 0.0:
        return 0.0
    p = 0.0
    for s in range(hvals.shape[0]):
        p += hw[s] * (a / (a + hvals[s] * M + eps))
    return p * dt


@njit(cache=True)
def objective(interp, v, xs, inv_h, x, a, hvals, hw, c, r, M, eps, dt):
    p = win_prob(a, hvals, hw, M, eps, dt)
    y = x - c * a * dt
    lose = interp(v, xs, inv_h, y)
    if p == 0.0:
        return lose
    # written as an increment so a flat row gives exactly the flat value
    return lose + p * (interp(v, xs, inv_h, y + r) - lose)


@njit(cache=True)
def interp_diff(interp, locate, v, slopes, xs, inv_h, y1, y2, dy):
    """``interp(y1) - interp(y2)`` given ``dy = y1 - y2`` computed by the caller.

    Inside one cell this is ``slope * dy``, which keeps its relative accuracy
    however small ``dy`` is; subtracting two interpolated values would not.
    """
    m = xs.shape[0]
    lo = xs[0]
    hi = xs[m - 1]
    if (y1 <= lo and y2 <= lo) or (y1 >= hi and y2 >= hi):
        return 0.0
    if lo < y1 < hi and lo < y2 < hi:
        j1, w1 = locate(xs, inv_h, y1)
        j2, w2 = locate(xs, inv_h, y2)
        if j1 == j2:
            return dy * slopes[j1]
    return interp(v, xs, inv_h, y1) - interp(v, xs, inv_h, y2)


@njit(cache=True)
def prob_diff(a1, a2, hvals, hw, M, eps, dt):
    """``win_prob(a1) - win_prob(a2)`` without cancellation."""
    if a1 <= 0.0 or a2 <= 0.0:
        return win_prob(a1, hvals, hw, M, eps, dt) - win_prob(a2, hvals, hw, M, eps, dt)
    d = 0.0
    for s in range(hvals.shape[0]):
        k = hvals[s] * M + eps
        d += hw[s] * (k * (a1 - a2) / ((a1 + k) * (a2 + k)))
    return d * dt


@njit(cache=True)
def objective_diff(interp, locate, v, slopes, xs, inv_h, x, a1, a2, l1, w1, p2,
                   hvals, hw, c, r, M, eps, dt):
    """``q(a1) - q(a2)`` at node ``x``; ``l1, w1`` are the lose/win reads at
    ``a1`` and ``p2`` the win probability at ``a2``."""
    y1 = x - c * a1 * dt
    y2 = x - c * a2 * dt
    dy = -c * dt * (a1 - a2)
    dl = interp_diff(interp, locate, v, slopes, xs, inv_h, y1, y2, dy)
    dw = interp_diff(interp, locate, v, slopes, xs, inv_h, y1 + r, y2 + r, dy)
    dp = prob_diff(a1, a2, hvals, hw, M, eps, dt)
    return dl * (1.0 - p2) + dp * (w1 - l1) + p2 * dw


@njit(cache=True)
def bellman_step(interp, locate, v_next, xs, inv_h, acts, hvals, hw, c, r, M, eps, dt, refine, tol):
    m = xs.shape[0]
    na = acts.shape[0]
    pj = np.empty(na)
    dj = np.empty(na)
    for j in range(na):
        pj[j] = win_prob(acts[j], hvals, hw, M, eps, dt)
        dj[j] = c * acts[j] * dt
    v_out = np.empty(m)
    a_out = np.empty(m)
    best = np.empty(m, dtype=np.int64)
    for i in range(m):
        x = xs[i]
        best_j = 0
        best_f = -np.inf
        for j in range(na):
            y = x - dj[j]
            lose = interp(v_next, xs, inv_h, y)
            f = lose + pj[j] * (interp(v_next, xs, inv_h, y + r) - lose)
            if f > best_f:
                best_f = f
                best_j = j
        best[i] = best_j
        v_out[i] = best_f
        a_out[i] = acts[best_j]
    if not refine or na < 2:
        return v_out, a_out

    # golden-section polish inside the neighbouring scan cells.  Points are
    # compared through objective_diff: near a flat optimum the two values
    # agree to rounding, and comparing them directly stalls the search far
    # above the requested width.  The searches run in lockstep over nodes
    # so the independent chains pipeline.
    slopes = np.empty(m - 1)
    for j in range(m - 1):
        slopes[j] = (v_next[j + 1] - v_next[j]) / (xs[j + 1] - xs[j])
    lo = np.empty(m)
    hi = np.empty(m)
    x1 = np.empty(m)
    x2 = np.empty(m)
    l1 = np.empty(m)
    w1 = np.empty(m)
    p1 = np.empty(m)
    l2 = np.empty(m)
    w2 = np.empty(m)
    p2 = np.empty(m)
    for i in range(m):
        j = best[i]
        lo[i] = acts[j - 1] if j > 0 else acts[0]
        hi[i] = acts[j + 1] if j < na - 1 else acts[na - 1]
        x1[i] = hi[i] - INV_PHI * (hi[i] - lo[i])
        x2[i] = lo[i] + INV_PHI * (hi[i] - lo[i])
        y = xs[i] - c * x1[i] * dt
        l1[i] = interp(v_next, xs, inv_h, y)
        w1[i] = interp(v_next, xs, inv_h, y + r)
        p1[i] = win_prob(x1[i], hvals, hw, M, eps, dt)
        y = xs[i] - c * x2[i] * dt
        l2[i] = interp(v_next, xs, inv_h, y)
        w2[i] = interp(v_next, xs, inv_h, y + r)
        p2[i] = win_prob(x2[i], hvals, hw, M, eps, dt)
    active = True
    while active:
        active = False
        for i in range(m):
            if hi[i] - lo[i] <= tol:
                continue
            active = True
            d = (l1[i] + p1[i] * (w1[i] - l1[i])) - (l2[i] + p2[i] * (w2[i] - l2[i]))
            if abs(d) <= ROUND_GUARD * (abs(l1[i]) + abs(w1[i]) + abs(l2[i]) + abs(w2[i])):
                # the rounded values cannot order the points
                d = objective_diff(interp, locate, v_next, slopes, xs, inv_h, xs[i], x1[i], x2[i],
                                   l1[i], w1[i], p2[i], hvals, hw, c, r, M, eps, dt)
            if d >= 0.0:
                hi[i] = x2[i]
                x2[i] = x1[i]
                l2[i] = l1[i]
                w2[i] = w1[i]
                p2[i] = p1[i]
                x1[i] = hi[i] - INV_PHI * (hi[i] - lo[i])
                y = xs[i] - c * x1[i] * dt
                l1[i] = interp(v_next, xs, inv_h, y)
                w1[i] = interp(v_next, xs, inv_h, y + r)
                p1[i] = win_prob(x1[i], hvals, hw, M, eps, dt)
            else:
                lo[i] = x1[i]
                x1[i] = x2[i]
                l1[i] = l2[i]
                w1[i] = w2[i]
                p1[i] = p2[i]
                x2[i] = lo[i] + INV_PHI * (hi[i] - lo[i])
                y = xs[i] - c * x2[i] * dt
                l2[i] = interp(v_next, xs, inv_h, y)
                w2[i] = interp(v_next, xs, inv_h, y + r)
                p2[i] = win_prob(x2[i], hvals, hw, M, eps, dt)
    for i in range(m):
        x = xs[i]
        d = objective_diff(interp, locate, v_next, slopes, xs, inv_h, x, x1[i], x2[i],
                           l1[i], w1[i], p2[i], hvals, hw, c, r, M, eps, dt)
        if d >= 0.0:
            ac, lc, wc, pc = x1[i], l1[i], w1[i], p1[i]
        else:
            ac, lc, wc, pc = x2[i], l2[i], w2[i], p2[i]
        # leave the scanned point only on a strict improvement
        j = best[i]
        if ac != acts[j]:
            gain = objective_diff(interp, locate, v_next, slopes, xs, inv_h, x, ac, acts[j],
                                  lc, wc, pj[j], hvals, hw, c, r, M, eps, dt)
            if gain > 0.0:
                a_out[i] = ac
                v_out[i] = lc + pc * (wc - lc)
    return v_out, a_out


@njit(cache=True)
def evaluate_step(interp, v_next, xs, inv_h, a_row, hvals, hw, c, r, M, eps, dt):
    m = xs.shape[0]
    v_out = np.empty(m)
    for i in range(m):
        v_out[i] = objective(interp, v_next, xs, inv_h, xs[i], a_row[i], hvals, hw, c, r, M, eps, dt)
    return v_out


@njit(cache=True)
def deposit(locate, mu, xs, inv_h, y, mass):
    """Mean-preserving two-node split; returns the mass clamped at the edges."""
    m = xs.shape[0]
    if y < xs[0]:
        mu[0] += mass
        return mass
    if y > xs[m - 1]:
        mu[m - 1] += mass
        return mass
    j, w = locate(xs, inv_h, y)
    hi = w * mass
    mu[j + 1] += hi
    mu[j] += mass - hi
    return 0.0


@njit(cache=True)
def forward_step(locate, mu, xs, inv_h, a_row, hvals, hw, c, r, M, eps, dt):
    m = xs.shape[0]
    out = np.zeros(m)
    clamped = 0.0
    cmean = 0.0
    for i in range(m):
        q = mu[i]
        if q == 0.0:
            continue
        a = a_row[i]
        cmean += a * q
        p = win_prob(a, hvals, hw, M, eps, dt)
        y = xs[i] - c * a * dt
        q_up = p * q
        if q_up > 0.0:
            clamped += deposit(locate, out, xs, inv_h, y + r, q_up)
        if a == 0.0:
            # no drift: keep the mass on its node rather than split by rounding
            out[i] += q - q_up
        else:
            clamped += deposit(locate, out, xs, inv_h, y, q - q_up)
    return out, cmean, clamped
