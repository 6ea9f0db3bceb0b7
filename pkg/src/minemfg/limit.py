"""Dyadic refinement: step-function flows, averaging, and exact path simulation.

A discrete equilibrium at order ``n`` is embedded in continuous time as a
right-continuous step function on the dyadic partition ``k / 2**n``.  The
thinning simulator samples the controlled jump process directly against a
majorant of rate 1, which bounds the intensity everywhere.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from numba import njit

from .core import HashRateFlow, PolicyTable, TimeGrid, WealthGrid
from .equilibrium import EquilibriumResult, Game, SolverConfig, solve
from .model import ModelParams

log = logging.getLogger(__name__)


@dataclass(eq=False)
class StepFlow:
    """Piecewise-constant hash-rate flow on ``[k/2**n, (k+1)/2**n)``."""

    values: np.ndarray
    n: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.n < 0:
            raise ValueError("order n must be >= 0")
        if self.values.size % (1 << self.n):
            raise ValueError("number of steps must be a multiple of 2**n")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("flow values must be finite and nonnegative")

    @property
    def dt(self) -> float:
        return 2.0 ** (-self.n)

    @property
    def T(self) -> int:
        return self.values.size >> self.n

    @property
    def breakpoints(self) -> np.ndarray:
        return np.arange(self.values.size + 1) * self.dt

    def __call__(self, t):
        """Right-continuous evaluation; ``t = T`` returns the last value."""
        t = np.asarray(t, dtype=float)
        k = np.clip(np.floor(t * (1 << self.n)).astype(np.int64), 0, self.values.size - 1)
        out = self.values[k]
        return out if out.ndim else float(out)

    def at_order(self, m: int) -> "StepFlow":
        """The same function on a finer partition (values repeated)."""
        if m < self.n:
            raise ValueError("use discretize_flow to coarsen")
        return StepFlow(np.repeat(self.values, 1 << (m - self.n)), m)

    def l1_norm(self) -> float:
        return float(self.dt * np.abs(self.values).sum())


def step_flow_distance(a: StepFlow, b: StepFlow) -> float:
    """L1 distance on ``[0, T]`` between two step flows of any orders."""
    if a.T != b.T:
        raise ValueError(f"horizons differ: {a.T} vs {b.T}")
    m = max(a.n, b.n)
    fa, fb = a.at_order(m), b.at_order(m)
    return float(fa.dt * np.abs(fa.values - fb.values).sum())


def discretize_flow(flow: Union[StepFlow, Callable], n: int, T: Optional[int] = None,
                    quad_points: int = 8) -> np.ndarray:
    """Interval averages ``2**n * int_{k/2**n}^{(k+1)/2**n} eta_t dt``.

    Step flows are averaged exactly.  A callable ``t -> eta_t`` needs ``T`` and
    is integrated by Gauss-Legendre quadrature on each interval, exact for
    polynomials up to degree ``2 * quad_points - 1``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if isinstance(flow, StepFlow):
        if flow.n >= n:
            return flow.values.reshape(-1, 1 << (flow.n - n)).mean(axis=1)
        return flow.at_order(n).values.copy()
    if T is None:
        raise ValueError("a callable flow needs the horizon T")
    K = T << n
    dt = 2.0 ** (-n)
    nodes, weights = np.polynomial.legendre.leggauss(quad_points)
    left = np.arange(K) * dt
    t = left[:, None] + 0.5 * dt * (nodes[None, :] + 1.0)
    vals = np.asarray(np.vectorize(flow, otypes=[float])(t), dtype=float)
    avg = 0.5 * vals @ weights
    # quadrature must not leave the range of the sampled values
    return np.clip(avg, vals.min(), vals.max())


def interpolate_equilibrium(result: Union[EquilibriumResult, HashRateFlow], n: int) -> StepFlow:
    eta = result.eta if isinstance(result, EquilibriumResult) else result
    return StepFlow(eta.eta_bar.copy(), n)


# ---------------------------------------------------------------------------
# refinement study

@dataclass
class RefinementRow:
    n: int
    K: int
    L1_distance_to_next: float
    iterations: int
    wall_time_s: float
    converged: bool
    error: str = ""


@dataclass(eq=False)
class RefinementStudy:
    rows: List[RefinementRow]
    flows: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.L1_distance_to_next for r in self.rows[:-1]])

    def to_csv(self, path) -> None:
        cols = ("n", "K", "L1_distance_to_next", "iterations", "wall_time_s")
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                d = "" if np.isnan(r.L1_distance_to_next) else repr(float(r.L1_distance_to_next))
                fh.write(f"{r.n},{r.K},{d},{r.iterations},{r.wall_time_s:.3f}\n")


def refinement_study(game: Game, config: SolverConfig, n_range: Sequence[int],
                     warm_start: bool = True, on_result=None) -> RefinementStudy:
    """Solve the same game at each order in ``n_range`` and compare flows.

    With ``warm_start`` each solve starts from the previous order's flow
    viewed on the finer partition; the fixed point does not depend on the
    start, only the iteration count does.  A failed order is recorded with
    its error and skipped in the distance column.
    """
    ns = list(n_range)
    if any(b < a for a, b in zip(ns, ns[1:])):
        raise ValueError("n_range must be ascending")
    rows: List[RefinementRow] = []
    flows, results = {}, {}
    prev: Optional[StepFlow] = None
    for n in ns:
        g = game.with_time(TimeGrid(n, game.time.T))
        cfg = config
        if warm_start and prev is not None:
            cfg = _with_initial(config, discretize_flow(prev, n))
        t0 = _time.perf_counter()
        try:
            res = solve(g, cfg)
        except Exception as exc:  # recorded, study continues
            log.warning("order n=%d failed: %s", n, exc)
            rows.append(RefinementRow(n, g.time.K, np.nan, 0, _time.perf_counter() - t0, False, str(exc)))
            continue
        sf = interpolate_equilibrium(res, n)
        flows[n], results[n] = sf, res
        rows.append(RefinementRow(n, g.time.K, np.nan, res.iterations, res.wall_time, res.converged))
        if on_result is not None:
            on_result(n, res)
        prev = sf
    for i, row in enumerate(rows[:-1]):
        nxt = rows[i + 1]
        if row.n in flows and nxt.n in flows:
            row.L1_distance_to_next = step_flow_distance(flows[row.n], flows[nxt.n])
    return RefinementStudy(rows, flows, results)


def _with_initial(config: SolverConfig, init) -> SolverConfig:
    from dataclasses import replace
    return replace(config, initial_flow=np.asarray(init, dtype=float))


# ---------------------------------------------------------------------------
# thinning simulator

@dataclass(eq=False)
class ContinuousPath:
    """Wealth path with linear pieces between events and jumps of size ``r``.

    Segment ``i`` starts at ``seg_t[i]`` with wealth ``seg_x[i]`` just after
    any jump there, and drifts with slope ``-seg_rate[i]`` until the next
    segment start (or ``T``).
    """

    x0: float
    T: float
    r: float
    jump_times: np.ndarray
    seg_t: np.ndarray
    seg_x: np.ndarray
    seg_rate: np.ndarray

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)

    def wealth(self, t):
        """Right-continuous wealth at ``t``."""
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self.seg_t, t, side="right") - 1, 0, self.seg_t.size - 1)
        out = self.seg_x[i] - self.seg_rate[i] * (t - self.seg_t[i])
        return out if out.ndim else float(out)

    @property
    def terminal_wealth(self) -> float:
        return float(self.seg_x[-1] - self.seg_rate[-1] * (self.T - self.seg_t[-1]))


@njit(cache=True)
def _policy_at(A, xs, k, x):
    m = xs.shape[0]
    if x <= xs[0]:
        return A[k, 0]
    if x >= xs[m - 1]:
        return A[k, m - 1]
    lo = 0
    hi = m - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - xs[lo]) / (xs[lo + 1] - xs[lo])
    return A[k, lo] + w * (A[k, lo + 1] - A[k, lo])


@njit(cache=True)
def _thin_path(A, xs, eta, scale, T, x0, c, r, M, eps, cand, accept, seg_t, seg_x, seg_rate, jumps):
    """Walk one path; candidate times ``cand`` are sorted uniform points of a
    rate-1 process on [0, T].  Returns (segments written, jumps accepted)."""
    K = eta.shape[0]
    ns = 0
    nj = 0
    t = 0.0
    x = x0
    k = 0
    a = _policy_at(A, xs, 0, x)
    seg_t[0] = 0.0
    seg_x[0] = x
    seg_rate[0] = c * a
    ns = 1
    ci = 0
    while True:
        t_next_k = (k + 1) / scale
        tc = cand[ci] if ci < cand.shape[0] else np.inf
        if tc < t_next_k:
            # advance to the candidate, thin with the current intensity
            x -= c * a * (tc - t)
            t = tc
            lam = 0.0
            if a > 0.0:
                lam = a / (a + eta[k] * M + eps)
            if accept[ci] < lam:
                x += r
                jumps[nj] = t
                nj += 1
                a = _policy_at(A, xs, k, x)
                seg_t[ns] = t
                seg_x[ns] = x
                seg_rate[ns] = c * a
                ns += 1
            ci += 1
        else:
            if k + 1 >= K:
                break
            x -= c * a * (t_next_k - t)
            t = t_next_k
            k += 1
            a = _policy_at(A, xs, k, x)
            seg_t[ns] = t
            seg_x[ns] = x
            seg_rate[ns] = c * a
            ns += 1
    return ns, nj


@njit(cache=True)
def _thin_batch(A, xs, eta, scale, T, x0s, c, r, M, eps, counts, cand, accept, n_jumps, x_T):
    off = 0
    max_c = 0
    for p in range(counts.shape[0]):
        if counts[p] > max_c:
            max_c = counts[p]
    K = eta.shape[0]
    seg_t = np.empty(K + max_c + 1)
    seg_x = np.empty(K + max_c + 1)
    seg_rate = np.empty(K + max_c + 1)
    jumps = np.empty(max_c + 1)
    for p in range(counts.shape[0]):
        cp = counts[p]
        ns, nj = _thin_path(A, xs, eta, scale, T, x0s[p], c, r, M, eps,
                            cand[off:off + cp], accept[off:off + cp], seg_t, seg_x, seg_rate, jumps)
        n_jumps[p] = nj
        x_T[p] = seg_x[ns - 1] - seg_rate[ns - 1] * (T - seg_t[ns - 1])
        off += cp


def _draw_candidates(rng: np.random.Generator, T: float, n_paths: int):
    counts = rng.poisson(T, size=n_paths)
    total = int(counts.sum())
    cand = rng.uniform(0.0, T, size=total)
    accept = rng.uniform(0.0, 1.0, size=total)
    # sort candidate times within each path
    offs = np.concatenate(([0], np.cumsum(counts)))
    path_id = np.repeat(np.arange(n_paths), counts)
    order = np.lexsort((cand, path_id))
    return counts.astype(np.int64), cand[order], accept, offs


def _check_inputs(policy: PolicyTable, eta: StepFlow, grid: WealthGrid):
    if policy.actions.shape != (eta.values.size, len(grid)):
        raise ValueError("policy shape must be (K, len(grid)) matching the flow")


def simulate_continuous_path(policy: PolicyTable, eta: StepFlow, x0: float, seed: int,
                             params: ModelParams, grid: WealthGrid) -> ContinuousPath:
    """Sample one path of the controlled jump process by thinning.

    The action is ``a*(floor(t * 2**n), X)`` read from ``policy`` with linear
    interpolation in wealth.  It is re-read at every dyadic breakpoint and
    after every jump and held fixed in between, so the drift between events
    is integrated exactly.
    """
    _check_inputs(policy, eta, grid)
    rng = np.random.default_rng(seed)
    counts, cand, accept, _ = _draw_candidates(rng, float(eta.T), 1)
    K = eta.values.size
    cp = int(counts[0])
    seg_t = np.empty(K + cp + 1)
    seg_x = np.empty(K + cp + 1)
    seg_rate = np.empty(K + cp + 1)
    jumps = np.empty(cp + 1)
    A = np.ascontiguousarray(policy.actions, dtype=float)
    ns, nj = _thin_path(A, grid.points, eta.values, float(1 << eta.n), float(eta.T), float(x0),
                        params.c, params.r, params.M, params.eps, cand, accept,
                        seg_t, seg_x, seg_rate, jumps)
    return ContinuousPath(float(x0), float(eta.T), params.r, jumps[:nj].copy(),
                          seg_t[:ns].copy(), seg_x[:ns].copy(), seg_rate[:ns].copy())


def simulate_jump_counts(policy: PolicyTable, eta: StepFlow, x0, n_paths: int, seed: int,
                         params: ModelParams, grid: WealthGrid):
    """Batch version of :func:`simulate_continuous_path`.

    Returns ``(jump_counts, terminal_wealth)`` per path; ``x0`` is a scalar
    or one start per path.
    """
    _check_inputs(policy, eta, grid)
    rng = np.random.default_rng(seed)
    counts, cand, accept, _ = _draw_candidates(rng, float(eta.T), n_paths)
    x0s = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,)).copy()
    n_jumps = np.empty(n_paths, dtype=np.int64)
    x_T = np.empty(n_paths)
    A = np.ascontiguousarray(policy.actions, dtype=float)
    _thin_batch(A, grid.points, eta.values, float(1 << eta.n), float(eta.T), x0s,
                params.c, params.r, params.M, params.eps, counts, cand, accept, n_jumps, x_T)
    return n_jumps, x_T
