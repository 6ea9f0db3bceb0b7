"""Finite-population Monte Carlo for the mining game.

Every agent follows the same grid policy.  In ``validation`` mode win
probabilities use the mean-field flow; in ``true`` mode they use the live
mean of the other agents' hash rates.

By default agents live on the wealth grid: after each step an agent's new
wealth is rounded to one of its two neighbouring nodes with the
mean-preserving probabilities the forward equation uses, so the population
is an exact particle version of the discretised chain.  With
``lattice=False`` wealth is kept exact and the policy is interpolated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import HashRateFlow, PolicyTable, WealthGrid
from .equilibrium import Game, SolverConfig, best_response_value_gap
from .model import lambda_eps

MODES = ("validation", "true")


@dataclass(eq=False)
class PopulationState:
    wealth: np.ndarray
    control_mean: float
    histogram: np.ndarray
    seed: int


@dataclass(eq=False)
class PopulationTrajectory:
    """``wealth`` is ``(K+1, N)``; ``actions`` and ``wins`` are ``(K, N)``."""

    wealth: np.ndarray
    actions: np.ndarray
    wins: np.ndarray
    eta_bar: np.ndarray
    policy: PolicyTable
    grid: WealthGrid
    dt: float
    mode: str
    seed: int
    lattice: bool = True

    @property
    def N(self) -> int:
        return self.wealth.shape[1]

    @property
    def K(self) -> int:
        return self.actions.shape[0]

    @property
    def control_mean(self) -> np.ndarray:
        return self.actions.mean(axis=1)

    @property
    def control_sd(self) -> np.ndarray:
        return self.actions.std(axis=1, ddof=1) if self.N > 1 else np.zeros(self.K)

    def histogram(self, k: int) -> np.ndarray:
        return wealth_histogram(self.wealth[k], self.grid)

    def state(self, k: int) -> PopulationState:
        cm = float(self.control_mean[k]) if k < self.K else float("nan")
        return PopulationState(self.wealth[k].copy(), cm, self.histogram(k), self.seed)


def wealth_histogram(x, grid: WealthGrid) -> np.ndarray:
    """Empirical law of ``x`` on the grid with mean-preserving splits."""
    xs = grid.points
    x = np.clip(np.asarray(x, dtype=float), xs[0], xs[-1])
    j = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
    w = (x - xs[j]) / (xs[j + 1] - xs[j])
    out = np.zeros(xs.size)
    np.add.at(out, j + 1, w)
    np.add.at(out, j, 1.0 - w)
    return out / x.size


def _policy_row(policy: PolicyTable, grid: WealthGrid, k: int, x: np.ndarray) -> np.ndarray:
    return np.interp(x, grid.points, policy.actions[k])


def _round_to_grid(y, xs, u):
    y = np.clip(y, xs[0], xs[-1])
    j = np.clip(np.searchsorted(xs, y, side="right") - 1, 0, xs.size - 2)
    w = (y - xs[j]) / (xs[j + 1] - xs[j])
    return xs[j + (u < w)]


def simulate_population(N: int, policy: PolicyTable, eta: HashRateFlow, game: Game, seed: int,
                        mode: str = "validation", include_self: bool = False,
                        x0: Optional[np.ndarray] = None, lattice: bool = True) -> PopulationTrajectory:
    """Run ``N`` agents for ``K`` steps under a shared policy.

    Agent ``i`` owns the ``i``-th child of ``SeedSequence(seed)``: its first
    uniform places it on the grid according to ``game.mu0`` (unless ``x0``
    is given), then each step takes one uniform for the block win and, on
    the lattice, one for the rounding.  The result therefore does not depend
    on how agents are batched.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    K = game.time.K
    if policy.actions.shape != (K, len(game.grid)):
        raise ValueError("policy shape does not match the game")
    if len(eta) != K:
        raise ValueError("flow length does not match the game")
    params, dt, grid = game.params, game.time.dt, game.grid

    children = np.random.SeedSequence(seed).spawn(N)
    U = np.empty((2 * K + 1, N))
    for i, ss in enumerate(children):
        U[:, i] = np.random.default_rng(ss).random(2 * K + 1)

    X = np.empty((K + 1, N))
    if x0 is None:
        cdf = np.cumsum(game.mu0)
        idx = np.minimum(np.searchsorted(cdf, U[0] * cdf[-1], side="right"), len(grid) - 1)
        X[0] = grid.points[idx]
    else:
        X[0] = np.broadcast_to(np.asarray(x0, dtype=float), (N,))
    A = np.empty((K, N))
    W = np.empty((K, N), dtype=bool)
    for k in range(K):
        a = _policy_row(policy, grid, k, X[k])
        A[k] = a
        if mode == "validation":
            h = eta.eta_bar[k]
        elif include_self:
            h = a.mean()
        elif N > 1:
            h = (a.sum() - a) / (N - 1)
        else:
            h = 0.0
        p = dt * lambda_eps(a, h, params)
        W[k] = U[2 * k + 1] < p
        y = X[k] - params.c * a * dt + params.r * W[k]
        X[k + 1] = _round_to_grid(y, grid.points, U[2 * k + 2]) if lattice else y
    return PopulationTrajectory(X, A, W, eta.eta_bar.copy(), policy, grid, dt, mode, seed, lattice)


def empirical_exploitability(traj: PopulationTrajectory, game: Game,
                             config: SolverConfig = SolverConfig()) -> float:
    """Value a lone deviator gains against the realised mean hash-rate flow."""
    emp = HashRateFlow(np.clip(traj.control_mean, 0.0, game.params.L))
    return best_response_value_gap(emp, traj.policy, game, config)


def flow_l1_distance(traj: PopulationTrajectory) -> float:
    """``int |empirical control mean - eta_bar| dt`` over the horizon."""
    return float(traj.dt * np.abs(traj.control_mean - traj.eta_bar).sum())


def clt_band_fraction(traj: PopulationTrajectory, n_se: float = 4.0, sd=None, tol: float = 0.0) -> float:
    """Share of steps whose empirical control mean lies within ``n_se``
    standard errors of ``eta_bar``.

    ``sd`` defaults to the sample standard deviation of the actions; pass
    the mean-field standard deviation to use the exact one instead.  ``tol``
    widens the band by a deterministic amount, typically the fixed-point
    residual ``max |Phi(eta_bar) - eta_bar|``: the sample mean is centred on
    the induced flow, which a converged solve only matches up to it.
    """
    s = traj.control_sd if sd is None else np.asarray(sd, dtype=float)
    se = s / np.sqrt(traj.N)
    slack = tol + 1e-12 * max(1.0, float(np.max(np.abs(traj.eta_bar), initial=0.0)))
    return float(np.mean(np.abs(traj.control_mean - traj.eta_bar) <= n_se * se + slack))


def mean_field_control_sd(policy: PolicyTable, flow) -> np.ndarray:
    """Standard deviation of the action under the propagated wealth law."""
    A = policy.actions
    mu = flow.mu[:A.shape[0]]
    m = (mu * A).sum(axis=1)
    return np.sqrt(np.maximum((mu * (A - m[:, None]) ** 2).sum(axis=1), 0.0))


def gini(w) -> float:
    """Gini coefficient of a nonnegative sample."""
    w = np.sort(np.asarray(w, dtype=float))
    if np.any(w < 0):
        raise ValueError("Gini needs nonnegative values")
    n, total = w.size, w.sum()
    if n == 0 or total == 0 or w[0] == w[-1]:
        return 0.0
    i = np.arange(1, n + 1)
    return float(2.0 * np.dot(i, w) / (n * total) - (n + 1.0) / n)


def gini_weighted(x, w) -> float:
    """Gini coefficient of a discrete law with masses ``w`` at ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(x < 0) or np.any(w < 0):
        raise ValueError("Gini needs nonnegative values and weights")
    o = np.argsort(x, kind="stable")
    x, w = x[o], w[o] / w.sum()
    s = np.cumsum(w * x)
    if s[-1] == 0:
        return 0.0
    prev = np.concatenate(([0.0], s[:-1]))
    return float(1.0 - np.dot(w, prev + s) / s[-1])


@dataclass(eq=False)
class WealthStats:
    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray
    gini: np.ndarray
    dropout: np.ndarray
    shift: float


def wealth_statistics(traj: PopulationTrajectory) -> WealthStats:
    """Per-step moments, Gini and dropout share, steps ``0..K``.

    Gini uses wealth shifted by one constant for the whole run so that the
    poorest agent ever seen sits at 0 when wealth goes negative.  Dropout at
    step ``K`` reads the last policy row at terminal wealth.
    """
    X = traj.wealth
    # moments of offsets from the first agent, exact for identical agents
    D = X - X[:, :1]
    dm = D.mean(axis=1)
    mean = X[:, 0] + dm
    var = D.var(axis=1)
    m3 = ((D - dm[:, None]) ** 3).mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(var > 0, m3 / np.where(var > 0, var, 1.0) ** 1.5, 0.0)
    shift = max(0.0, -float(X.min()))
    g = np.array([gini(row + shift) for row in X])
    drop = np.empty(X.shape[0])
    drop[:-1] = (traj.actions == 0).mean(axis=1)
    last = _policy_row(traj.policy, traj.grid, traj.K - 1, X[-1]) if traj.K else np.zeros(traj.N)
    drop[-1] = float(np.mean(last == 0))
    return WealthStats(mean, var, skew, g, drop, shift)


def write_trajectory_csv(traj: PopulationTrajectory, path, stats: Optional[WealthStats] = None) -> None:
    stats = wealth_statistics(traj) if stats is None else stats
    cm = traj.control_mean
    with open(path, "w") as fh:
        fh.write("step,mean_wealth,gini,dropout_fraction,empirical_control_mean,eta_bar\n")
        for k in range(traj.K + 1):
            tail = f"{cm[k]!r},{traj.eta_bar[k]!r}" if k < traj.K else ","
            fh.write(f"{k},{stats.mean[k]!r},{stats.gini[k]!r},{stats.dropout[k]!r},{tail}\n")
