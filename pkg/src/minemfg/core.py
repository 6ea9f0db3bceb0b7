"""Finite-horizon dynamic programming on a wealth grid.

Backward induction against a fixed hash-rate flow, policy evaluation, and
forward propagation of the wealth distribution under a sharp policy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .model import ModelParams

log = logging.getLogger(__name__)


class GridError(ValueError):
    """The wealth grid cannot represent the dynamics."""


class MassLeakError(RuntimeError):
    """Too much probability mass hit the wealth-grid boundary."""


# --------------------------------------------------------------------------
# grids and tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Dyadic time grid: ``K = T * 2**n`` steps of length ``2**-n``."""

    n: int
    T: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("refinement order n must be >= 0")
        if self.T < 0:
            raise ValueError("horizon T must be >= 0")

    @property
    def K(self) -> int:
        return self.T * 2**self.n

    @property
    def dt(self) -> float:
        return 2.0 ** (-self.n)

    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt


def _is_uniform(points: np.ndarray) -> bool:
    h = np.diff(points)
    return bool(np.all(np.abs(h - h.mean()) <= 1e-11 * h.mean()))


@dataclass(frozen=True, eq=False)
class WealthGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise GridError("wealth grid needs at least 2 points")
        if np.any(np.diff(pts) <= 0):
            raise GridError("wealth grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "uniform", _is_uniform(pts))
        object.__setattr__(self, "inv_h", (pts.size - 1) / (pts[-1] - pts[0]))

    @classmethod
    def linspace(cls, x_min: float, x_max: float, size: int) -> "WealthGrid":
        return cls(np.linspace(x_min, x_max, size))

    @property
    def x_min(self) -> float:
        return float(self.points[0])

    @property
    def x_max(self) -> float:
        return float(self.points[-1])

    def __len__(self):
        return self.points.size

    @property
    def kernels(self):
        """``(interp, locate)`` compiled routines suited to this grid."""
        return (K.interp_u, K.locate_u) if self.uniform else (K.interp_g, K.locate_g)


@dataclass(frozen=True, eq=False)
class ActionGrid:
    L: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 1:
            raise GridError("action grid needs at least one point")
        if pts[0] != 0.0 or pts[-1] != self.L:
            raise GridError("action grid must start at 0 and end at L")
        if np.any(np.diff(pts) <= 0):
            raise GridError("action grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, L: float, size: int) -> "ActionGrid":
        return cls(L, np.linspace(0.0, L, size))

    def __len__(self):
        return self.points.size


def auto_wealth_grid(mu0_quantiles: tuple, time: TimeGrid, params: ModelParams, size: int) -> WealthGrid:
    """Worst-case grid: lowest start minus full-throttle cost, highest start plus a win every step."""
    q_lo, q_hi = mu0_quantiles
    return WealthGrid.linspace(q_lo - params.c * params.L * time.T, q_hi + time.K * params.r, size)


@dataclass(eq=False)
class HashRateFlow:
    """Population mean hash rate per step, optionally backed by control measures.

    ``weights`` (shape ``K x S``) over ``support`` (length ``S``) gives the
    measure-valued flow used by scheme 1; ``eta_bar`` is then its mean.
    """

    eta_bar: np.ndarray
    support: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.eta_bar = np.asarray(self.eta_bar, dtype=float).reshape(-1)
        if np.any(~np.isfinite(self.eta_bar)) or np.any(self.eta_bar < 0):
            raise ValueError("hash-rate flow must be finite and nonnegative")
        if self.weights is not None:
            self.support = np.asarray(self.support, dtype=float)
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (self.eta_bar.size, self.support.size):
                raise ValueError("weights must have shape (K, len(support))")

    @classmethod
    def constant(cls, value: float, K: int) -> "HashRateFlow":
        return cls(np.full(K, float(value)))

    def __len__(self):
        return self.eta_bar.size

    def check_bounds(self, L: float):
        if np.any(self.eta_bar > L * (1 + 1e-12)):
            raise ValueError(f"hash-rate flow exceeds the action bound L={L}")

    def step_measure(self, k: int, scheme: int):
        """``(support, weights)`` arrays the kernels integrate the intensity against."""
        if scheme == 1 and self.weights is not None:
            return self.support, self.weights[k]
        return self.eta_bar[k : k + 1], _ONE


_ONE = np.ones(1)


@dataclass(eq=False)
class ValueTable:
    values: np.ndarray  # (K+1, m)


@dataclass(eq=False)
class PolicyTable:
    actions: np.ndarray  # (K, m)

    @classmethod
    def zeros(cls, K: int, m: int) -> "PolicyTable":
        return cls(np.zeros((K, m)))

    @classmethod
    def constant(cls, a: float, K: int, m: int) -> "PolicyTable":
        return cls(np.full((K, m), float(a)))


@dataclass(eq=False)
class DistributionFlow:
    mu: np.ndarray  # (K+1, m)
    control_mean: np.ndarray  # (K,)
    clamped_mass: float = 0.0
    control_weights: Optional[np.ndarray] = None  # (K, |actions|), scheme 1 only


@dataclass(frozen=True)
class OptimizerConfig:
    """Action search settings.

    refine: golden-section polish around the best scanned action.
    tol_frac: final bracket width as a fraction of L.
    drift_safety: reject grids narrower than ``c*L*dt / drift_safety``.
    """

    refine: bool = True
    tol_frac: float = 1e-6
    drift_safety: float = 0.5


RewardHook = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def interp_value(v_row, grid: WealthGrid, x):
    """Piecewise-linear read of a grid value row, clamped outside the grid."""
    v_row = np.asarray(v_row, dtype=float)
    out = np.interp(np.asarray(x, dtype=float), grid.points, v_row)
    return float(out) if np.ndim(out) == 0 else out


def _check_drift(grid: WealthGrid, params: ModelParams, dt: float, opt: OptimizerConfig):
    drift = params.c * params.L * dt
    if drift > (grid.x_max - grid.x_min) * opt.drift_safety:
        raise GridError(
            f"max one-step drift {drift:g} exceeds {opt.drift_safety:g} x grid width "
            f"{grid.x_max - grid.x_min:g}; widen the wealth grid"
        )


def _bellman_numpy(v_next, grid, actions, hvals, hw, params, dt, opt, reward):
    """Vectorised fallback used when a running reward is supplied."""
    xs = grid.points
    L = params.L

    def obj(x, a):
        lam = np.zeros(np.broadcast(x, a).shape)
        a_b = np.broadcast_to(a, lam.shape)
        pos = a_b > 0
        for h, w in zip(hvals, hw):
            lam[pos] += w * a_b[pos] / (a_b[pos] + h * params.M + params.eps)
        p = lam * dt
        y = x - params.c * a * dt
        lose = np.interp(y, xs, v_next)
        return lose + p * (np.interp(y + params.r, xs, v_next) - lose) + reward(x, a)

    acts = actions.points
    F = obj(xs[:, None], acts[None, :])
    j = np.argmax(F, axis=1)  # first maximiser, i.e. smallest action
    idx = np.arange(xs.size)
    best_f = F[idx, j]
    best_a = acts[j].copy()
    if opt.refine and acts.size > 1:
        lo = acts[np.maximum(j - 1, 0)]
        hi = acts[np.minimum(j + 1, acts.size - 1)]
        x1 = hi - K.INV_PHI * (hi - lo)
        x2 = lo + K.INV_PHI * (hi - lo)
        f1, f2 = obj(xs, x1), obj(xs, x2)
        tol = opt.tol_frac * L
        while np.any(hi - lo > tol):
            active = hi - lo > tol
            left = (f1 >= f2) & active
            right = ~(f1 >= f2) & active
            hi = np.where(left, x2, hi)
            lo = np.where(right, x1, lo)
            nx1 = np.where(left, hi - K.INV_PHI * (hi - lo), np.where(right, x2, x1))
            nx2 = np.where(right, lo + K.INV_PHI * (hi - lo), np.where(left, x1, x2))
            nf1 = np.where(left, obj(xs, nx1), np.where(right, f2, f1))
            nf2 = np.where(right, obj(xs, nx2), np.where(left, f1, f2))
            x1, x2, f1, f2 = nx1, nx2, nf1, nf2
        cand_a = np.where(f1 >= f2, x1, x2)
        cand_f = np.maximum(f1, f2)
        better = cand_f > best_f
        best_a = np.where(better, cand_a, best_a)
        best_f = np.where(better, cand_f, best_f)
    return best_f, best_a


def bellman_step(
    v_next,
    eta_k,
    grid: WealthGrid,
    actions: ActionGrid,
    params: ModelParams,
    n: int,
    opt: OptimizerConfig = OptimizerConfig(),
    reward: Optional[Callable] = None,
):
    """One Bellman backup.

    ``eta_k`` is either the mean hash rate at this step or a
    ``(support, weights)`` pair for a measure-valued flow entry.  Returns the
    value row and the maximising action row; ties go to the smallest action.
    ``reward(x, a)`` is an optional running reward added to the objective.
    """
    dt = 2.0 ** (-n)
    _check_drift(grid, params, dt, opt)
    if isinstance(eta_k, tuple):
        hvals, hw = (np.ascontiguousarray(u, dtype=float) for u in eta_k)
    else:
        hvals, hw = np.array([float(eta_k)]), _ONE
    v_next = np.ascontiguousarray(v_next, dtype=float)
    if reward is not None:
        return _bellman_numpy(v_next, grid, actions, hvals, hw, params, dt, opt, reward)
    return K.bellman_step(
        grid.kernels[0], grid.kernels[1], v_next, grid.points, grid.inv_h, actions.points, hvals, hw,
        params.c, params.r, params.M, params.eps, dt, opt.refine, opt.tol_frac * params.L,
    )


def backward_induction(
    eta: HashRateFlow,
    phi,
    grid: WealthGrid,
    actions: ActionGrid,
    params: ModelParams,
    time: TimeGrid,
    opt: OptimizerConfig = OptimizerConfig(),
    scheme: int = 2,
    reward: Optional[RewardHook] = None,
):
    """Value and sharp optimal policy against a fixed flow, from ``v_K = phi`` down to ``k = 0``."""
    K_ = time.K
    if len(eta) != K_:
        raise ValueError(f"flow has length {len(eta)}, expected K={K_}")
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (len(grid),) or not np.all(np.isfinite(phi)):
        raise ValueError("terminal utility must be finite on every grid node")
    V = np.empty((K_ + 1, len(grid)))
    A = np.empty((K_, len(grid)))
    V[K_] = phi
    for k in range(K_ - 1, -1, -1):
        step_reward = None if reward is None else (lambda x, a, k=k: reward(k, x, a))
        V[k], A[k] = bellman_step(
            V[k + 1], eta.step_measure(k, scheme), grid, actions, params, time.n, opt, step_reward
        )
    return ValueTable(V), PolicyTable(A)


def evaluate_policy(
    policy: PolicyTable,
    eta: HashRateFlow,
    phi,
    grid: WealthGrid,
    params: ModelParams,
    time: TimeGrid,
    scheme: int = 2,
    reward: Optional[RewardHook] = None,
) -> ValueTable:
    """Expected terminal utility of following ``policy`` against a fixed flow."""
    K_ = time.K
    dt = time.dt
    V = np.empty((K_ + 1, len(grid)))
    V[K_] = np.asarray(phi, dtype=float)
    for k in range(K_ - 1, -1, -1):
        hvals, hw = eta.step_measure(k, scheme)
        a_row = np.ascontiguousarray(policy.actions[k], dtype=float)
        V[k] = K.evaluate_step(
            grid.kernels[0], V[k + 1], grid.points, grid.inv_h, a_row, hvals, hw,
            params.c, params.r, params.M, params.eps, dt,
        )
        if reward is not None:
            V[k] += reward(k, grid.points, a_row)
    return ValueTable(V)


def _project_on_actions(a_row, mass, actions: ActionGrid):
    """Mean-preserving split of a control distribution onto the action grid."""
    pts = actions.points
    out = np.zeros(pts.size)
    if pts.size == 1:
        out[0] = mass.sum()
        return out
    j = np.clip(np.searchsorted(pts, a_row, side="right") - 1, 0, pts.size - 2)
    w = np.clip((a_row - pts[j]) / (pts[j + 1] - pts[j]), 0.0, 1.0)
    np.add.at(out, j + 1, w * mass)
    np.add.at(out, j, mass - w * mass)
    return out


def kolmogorov_forward(
    policy: PolicyTable,
    eta: HashRateFlow,
    mu0,
    grid: WealthGrid,
    params: ModelParams,
    time: TimeGrid,
    scheme: int = 2,
    max_clamped: float = 1e-6,
    actions: Optional[ActionGrid] = None,
) -> DistributionFlow:
    """Propagate the wealth law under ``policy`` and record the induced control mean.

    With ``actions`` given, also returns the induced control law projected on
    that grid (needed for scheme 1 flows).
    """
    K_ = time.K
    m = len(grid)
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.shape != (m,) or np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > 1e-12:
        raise ValueError("mu0 must be a probability vector on the wealth grid")
    mu = np.empty((K_ + 1, m))
    mu[0] = mu0
    cm = np.empty(K_)
    cw = None if actions is None else np.empty((K_, len(actions)))
    clamped = 0.0
    for k in range(K_):
        hvals, hw = eta.step_measure(k, scheme)
        a_row = np.ascontiguousarray(policy.actions[k], dtype=float)
        mu[k + 1], cm[k], c_k = K.forward_step(
            grid.kernels[1], mu[k], grid.points, grid.inv_h, a_row, hvals, hw,
            params.c, params.r, params.M, params.eps, time.dt,
        )
        if cw is not None:
            cw[k] = _project_on_actions(a_row, mu[k], actions)
        clamped += c_k
    if clamped > max_clamped:
        raise MassLeakError(
            f"{clamped:.3g} probability mass clamped at the wealth-grid boundary "
            f"(threshold {max_clamped:g}); widen the grid"
        )
    if clamped > 0:
        log.debug("clamped boundary mass %.3g", clamped)
    return DistributionFlow(mu, cm, clamped, cw)


def consistency_residual(eta: HashRateFlow, flow: DistributionFlow) -> float:
    """Sup-norm gap between the assumed flow and the control mean it induces."""
    e = eta.eta_bar if isinstance(eta, HashRateFlow) else np.asarray(eta, dtype=float)
    cm = np.asarray(flow.control_mean)
    if e.shape != cm.shape:
        raise ValueError(f"length mismatch: flow {e.shape} vs control mean {cm.shape}")
    if e.size == 0:
        return 0.0
    return float(np.max(np.abs(e - cm)))
