"""Slow, loop-based reference implementations used as test oracles."""
import numpy as np

from minemfg import ModelParams


def ref_interp(v, xs, y):
    if y <= xs[0]:
        return v[0]
    if y >= xs[-1]:
        return v[-1]
    j = max(i for i in range(len(xs) - 1) if xs[i] <= y)
    w = (y - xs[j]) / (xs[j + 1] - xs[j])
    return (1 - w) * v[j] + w * v[j + 1]


def ref_q(v, xs, x, a, h, p: ModelParams, n):
    dt = 2.0 ** -n
    lam = 0.0 if a == 0 else a / (a + h * p.M + p.eps)
    y = x - p.c * a * dt
    return lam * dt * ref_interp(v, xs, y + p.r) + (1 - lam * dt) * ref_interp(v, xs, y)


def ref_backward(phi, xs, acts, eta, p, n):
    """Per-node exhaustive maximisation over the action grid."""
    V = [list(phi)]
    for k in reversed(range(len(eta))):
        nxt = V[0]
        V.insert(0, [max(ref_q(nxt, xs, x, a, eta[k], p, n) for a in acts) for x in xs])
    return np.array(V)


def policy_value(policy, phi, xs, eta, p, n):
    v = list(phi)
    for k in reversed(range(len(eta))):
        v = [ref_q(v, xs, x, policy[k][i], eta[k], p, n) for i, x in enumerate(xs)]
    return np.array(v)
