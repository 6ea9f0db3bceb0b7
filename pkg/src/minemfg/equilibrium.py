"""Damped fixed-point iteration for the mean-field equilibrium.

Each iteration computes the best response to the current hash-rate flow,
pushes the initial wealth law forward under it, and mixes the induced mean
hash rate into the flow with weight ``1 - damping``.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .core import (
    ActionGrid,
    DistributionFlow,
    HashRateFlow,
    OptimizerConfig,
    PolicyTable,
    TimeGrid,
    ValueTable,
    WealthGrid,
    backward_induction,
    consistency_residual,
    evaluate_policy,
    kolmogorov_forward,
)
from .model import ModelParams, UtilitySpec, utility_eval

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Game:
    """Everything that defines one discretised mining game."""

    params: ModelParams
    time: TimeGrid
    grid: WealthGrid
    actions: ActionGrid
    utility: UtilitySpec
    mu0: np.ndarray

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float)
        if self.mu0.shape != (len(self.grid),):
            raise ValueError("mu0 must live on the wealth grid")
        if self.actions.L != self.params.L:
            raise ValueError("action grid bound differs from params.L")
        self.phi = utility_eval(self.utility, self.grid.points)

    def with_params(self, **changes) -> "Game":
        return replace(self, params=replace(self.params, **changes))

    def with_time(self, time: TimeGrid) -> "Game":
        return replace(self, time=time)


@dataclass
class SolverConfig:
    damping: float = 0.9
    tol: float = 1e-8
    max_iter: int = 5000
    initial_flow: Union[float, Sequence[float]] = 1.0
    scheme: int = 2
    # run the solve at each eps in turn, warm-starting; None keeps params.eps
    eps_schedule: Optional[Sequence[float]] = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    max_clamped: float = 1e-6
    consistency_safety: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping must lie in [0, 1), got {self.damping}")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.scheme not in (1, 2):
            raise ValueError("scheme must be 1 or 2")


@dataclass(eq=False)
class EquilibriumResult:
    eta: HashRateFlow
    policy: PolicyTable
    values: ValueTable
    flow: DistributionFlow
    residual_trace: np.ndarray
    consistency_residual: float
    iterations: int
    converged: bool
    consistency_bound: float
    positive: Optional[bool] = None
    wall_time: float = 0.0


class NonConvergence(RuntimeError):
    """Raised by :func:`solve` with ``strict=True``; carries the last result."""

    def __init__(self, result: EquilibriumResult):
        self.result = result
        super().__init__(
            f"no convergence after {result.iterations} iterations "
            f"(last change {result.residual_trace[-1]:.3e})"
        )


def initial_flow(game: Game, config: SolverConfig) -> HashRateFlow:
    K = game.time.K
    init = config.initial_flow
    if np.ndim(init) == 0:
        eta = HashRateFlow.constant(float(init), K)
    else:
        eta = HashRateFlow(np.asarray(init, dtype=float))
        if len(eta) != K:
            raise ValueError(f"initial flow has length {len(eta)}, expected {K}")
    eta.check_bounds(game.params.L)
    if config.scheme == 1:
        eta = _dirac_on_actions(eta, game.actions)
    return eta


def _dirac_on_actions(eta: HashRateFlow, actions: ActionGrid) -> HashRateFlow:
    """Represent mean hash rates as two-point laws on the action grid."""
    pts = actions.points
    w = np.zeros((len(eta), pts.size))
    if pts.size == 1:
        w[:, 0] = 1.0
    else:
        j = np.clip(np.searchsorted(pts, eta.eta_bar, side="right") - 1, 0, pts.size - 2)
        t = np.clip((eta.eta_bar - pts[j]) / (pts[j + 1] - pts[j]), 0.0, 1.0)
        rows = np.arange(len(eta))
        w[rows, j] = 1.0 - t
        w[rows, j + 1] += t
    return HashRateFlow(eta.eta_bar, support=pts, weights=w)


def best_response(eta: HashRateFlow, game: Game, config: SolverConfig, max_clamped: Optional[float] = None):
    """Best-response policy and values against ``eta`` plus the flow it induces."""
    values, policy = backward_induction(
        eta, game.phi, game.grid, game.actions, game.params, game.time, config.optimizer, config.scheme
    )
    flow = kolmogorov_forward(
        policy, eta, game.mu0, game.grid, game.params, game.time, config.scheme,
        max_clamped=config.max_clamped if max_clamped is None else max_clamped,
        actions=game.actions if config.scheme == 1 else None,
    )
    return policy, values, flow


def fixed_point_step(eta: HashRateFlow, game: Game, config: SolverConfig, max_clamped: Optional[float] = None):
    """One damped best-response update; returns ``(eta_next, policy, values, flow)``."""
    policy, values, flow = best_response(eta, game, config, max_clamped)
    th = config.damping
    eta_bar = th * eta.eta_bar + (1.0 - th) * flow.control_mean
    if config.scheme == 1 and eta.weights is not None:
        weights = th * eta.weights + (1.0 - th) * flow.control_weights
        eta_next = HashRateFlow(eta_bar, support=eta.support, weights=weights)
    else:
        eta_next = HashRateFlow(eta_bar)
    return eta_next, policy, values, flow


Callback = Callable[[int, float, float, float], None]


def _solve_once(game, config, eta, callback, it0):
    trace: List[float] = []
    converged = False
    for it in range(config.max_iter):
        # transient iterates may overshoot the grid; only the final pass is checked
        eta_next, _, _, _ = fixed_point_step(eta, game, config, max_clamped=np.inf)
        change = float(np.max(np.abs(eta_next.eta_bar - eta.eta_bar))) if len(eta) else 0.0
        trace.append(change)
        eta = eta_next
        if callback is not None:
            e = eta.eta_bar
            callback(it0 + it, change, float(e.min()) if e.size else 0.0, float(e.max()) if e.size else 0.0)
        if change < config.tol:
            converged = True
            break
    return eta, trace, converged


def solve(game: Game, config: SolverConfig = SolverConfig(), callback: Optional[Callback] = None,
          strict: bool = False) -> EquilibriumResult:
    """Iterate damped best responses until the flow stops moving.

    On exit a final undamped best-response pass is made against the last
    iterate; its policy, values and induced flow are what the result holds.
    Without ``strict`` a run that hits ``max_iter`` still returns, flagged
    ``converged=False``.
    """
    t0 = _time.perf_counter()
    eta = initial_flow(game, config)
    schedule = [game.params.eps] if config.eps_schedule is None else list(config.eps_schedule)
    trace: List[float] = []
    converged = True
    run_game = game
    for eps in schedule:
        run_game = game.with_params(eps=float(eps))
        eta, tr, ok = _solve_once(run_game, config, eta, callback, len(trace))
        trace.extend(tr)
        converged = ok
        log.info("eps=%g: %s after %d iterations", eps, "converged" if ok else "not converged", len(tr))

    policy, values, flow = best_response(eta, run_game, config)
    resid = consistency_residual(eta, flow)
    bound = config.tol / (1.0 - config.damping) * config.consistency_safety
    positive = None
    if game.utility.strictly_increasing and converged:
        positive = bool(len(eta) == 0 or eta.eta_bar.min() > 0.0)
        if not positive:
            log.warning("equilibrium hash rate touches zero (min %.3g)", eta.eta_bar.min())
    result = EquilibriumResult(
        eta=eta, policy=policy, values=values, flow=flow,
        residual_trace=np.asarray(trace), consistency_residual=resid,
        iterations=len(trace), converged=converged, consistency_bound=bound,
        positive=positive, wall_time=_time.perf_counter() - t0,
    )
    if strict and not converged:
        raise NonConvergence(result)
    return result


def best_response_value_gap(eta: HashRateFlow, candidate: PolicyTable, game: Game,
                            config: SolverConfig = SolverConfig()) -> float:
    """Expected utility a lone deviator gains over ``candidate`` at time 0.

    Integrates ``v0_best - v0_candidate`` against the initial wealth law,
    both computed against the same fixed flow.
    """
    if candidate.actions.shape != (game.time.K, len(game.grid)):
        raise ValueError("candidate policy shape does not match the game")
    best, _ = backward_induction(
        eta, game.phi, game.grid, game.actions, game.params, game.time, config.optimizer, config.scheme
    )
    cand = evaluate_policy(candidate, eta, game.phi, game.grid, game.params, game.time, config.scheme)
    return float(np.dot(game.mu0, best.values[0] - cand.values[0]))
