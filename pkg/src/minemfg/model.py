"""Cryptocurrency-mining instantiation of the jump-intensity game.

A miner with wealth ``x`` hashing at rate ``a`` over a step of length
``dt = 2**-n`` pays ``c * a * dt`` and wins the block reward ``r`` with
probability ``lambda_eps(a, h) * dt``, where ``h`` is the population mean
hash rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the mining game.

    c: electricity cost per unit hash rate per unit time.
    r: block reward.
    M: population scale (proxy for the number of miners).
    eps: intensity regularisation, ``eps >= 0``.
    L: upper bound on the hash rate.
    """

    c: float = 1.0
    r: float = 1.0
    M: float = 1000.0
    eps: float = 0.0
    L: float = 10.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if not self.r > 0:
            raise ValueError(f"r must be > 0, got {self.r}")
        if not self.M > 0:
            raise ValueError(f"M must be > 0, got {self.M}")
        if not self.eps >= 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if not self.L > 0:
            raise ValueError(f"L must be > 0, got {self.L}")


UTILITY_KINDS = ("crra_sqrt", "crra", "constant", "table")


@dataclass(frozen=True)
class UtilitySpec:
    """Terminal utility of wealth.

    ``crra_sqrt`` is ``2 * sqrt(x)``; ``crra`` is ``x**(1-gamma) / (1-gamma)``
    (``log x`` at ``gamma == 1``); ``constant`` returns ``value`` everywhere;
    ``table`` interpolates linearly through ``(xs, us)`` and refuses to
    extrapolate.
    """

    kind: str = "crra_sqrt"
    gamma: float = 0.5
    value: float = 0.0
    xs: tuple = field(default=())
    us: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}; expected one of {UTILITY_KINDS}")
        if self.kind == "crra" and not self.gamma > 0:
            raise ValueError("CRRA requires gamma > 0")
        if self.kind == "table":
            xs = np.asarray(self.xs, dtype=float)
            us = np.asarray(self.us, dtype=float)
            if xs.ndim != 1 or xs.size < 2 or xs.shape != us.shape:
                raise ValueError("table utility needs matching xs/us with at least 2 points")
            if np.any(np.diff(xs) <= 0):
                raise ValueError("table utility xs must be strictly increasing")

    @property
    def strictly_increasing(self) -> bool:
        if self.kind in ("crra_sqrt", "crra"):
            return True
        if self.kind == "table":
            return bool(np.all(np.diff(self.us) > 0))
        return False


def utility_eval(spec: UtilitySpec, x) -> np.ndarray:
    """Evaluate the terminal utility; CRRA kinds clamp negative wealth to 0."""
    x = np.asarray(x, dtype=float)
    if spec.kind == "crra_sqrt":
        return 2.0 * np.sqrt(np.maximum(x, 0.0))
    if spec.kind == "crra":
        g = spec.gamma
        xc = np.maximum(x, 0.0)
        if g == 1.0 or g > 1.0:
            if np.any(xc <= 0.0):
                raise ValueError(f"CRRA(gamma={g}) is unbounded below at x <= 0")
            if g == 1.0:
                return np.log(xc)
        return xc ** (1.0 - g) / (1.0 - g)
    if spec.kind == "constant":
        return np.full_like(x, spec.value)
    xs = np.asarray(spec.xs, dtype=float)
    if np.any(x < xs[0]) or np.any(x > xs[-1]):
        raise ValueError(f"table utility evaluated outside its support [{xs[0]}, {xs[-1]}]")
    return np.interp(x, xs, np.asarray(spec.us, dtype=float))


def lambda_eps(a, h, params: ModelParams):
    """Regularised win intensity ``a / (a + h*M + eps)``, zero at ``a == 0``."""
    a = np.asarray(a, dtype=float)
    h = np.asarray(h, dtype=float)
    pos = a > 0
    denom = np.where(pos, a + h * params.M + params.eps, 1.0)
    out = np.where(pos, a / denom, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DiscreteControlMeasure:
    """Probability weights over a fixed set of hash-rate support points."""

    support: tuple
    weights: tuple

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if s.ndim != 1 or s.shape != w.shape or s.size == 0:
            raise ValueError("support and weights must be 1-D of equal nonzero length")
        if np.any(w < 0):
            raise ValueError("measure weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"measure weights sum to {w.sum()!r}, not 1")

    @classmethod
    def dirac(cls, h: float) -> "DiscreteControlMeasure":
        return cls(support=(float(h),), weights=(1.0,))

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.weights))


FlowEntry = Union[float, DiscreteControlMeasure]


def jump_probability(a, flow_entry: FlowEntry, n: int, params: ModelParams, scheme: int = 2):
    """Per-step probability of winning the block reward.

    Scheme 1 integrates the intensity against a control measure; scheme 2
    evaluates it at the mean hash rate.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    dt = 2.0 ** (-n)
    if scheme == 2:
        h = flow_entry.mean if isinstance(flow_entry, DiscreteControlMeasure) else float(flow_entry)
        return dt * lambda_eps(a, h, params)
    if scheme == 1:
        if not isinstance(flow_entry, DiscreteControlMeasure):
            raise TypeError("scheme 1 needs a DiscreteControlMeasure flow entry")
        a = np.asarray(a, dtype=float)
        lam = lambda_eps(a[..., None], np.asarray(flow_entry.support), params)
        out = dt * (np.asarray(lam) @ np.asarray(flow_entry.weights))
        return out if np.ndim(out) else float(out)
    raise ValueError(f"scheme must be 1 or 2, got {scheme}")


def step_destinations(x, a, n: int, params: ModelParams):
    """Wealth after one step: ``(win, lose)``; they always differ by ``r``."""
    x_down = np.asarray(x, dtype=float) - params.c * np.asarray(a, dtype=float) * 2.0 ** (-n)
    x_up = x_down + params.r
    if x_down.ndim == 0:
        return float(x_up), float(x_down)
    return x_up, x_down


def project_truncated_normal(points: Sequence[float], mean: float, sd: float, lower: float = 0.0) -> np.ndarray:
    """Project ``Normal(mean, sd)`` truncated to ``[lower, inf)`` onto grid nodes.

    Mass inside each cell is split between its two end nodes so that the
    cell's first moment is kept exactly; tails outside the grid land on the
    boundary nodes.
    """
    from scipy.stats import norm

    xs = np.asarray(points, dtype=float)
    if sd <= 0:
        raise ValueError("sd must be > 0")
    z_lo = (lower - mean) / sd if np.isfinite(lower) else -np.inf
    norm_const = norm.sf(z_lo)

    def cdf(x):
        z = np.maximum((np.asarray(x) - mean) / sd, z_lo)
        return (norm.cdf(z) - norm.cdf(z_lo)) / norm_const

    def partial_mean(x):
        # integral of t dF(t) over [lower, x]
        z = np.maximum((np.asarray(x) - mean) / sd, z_lo)
        return (mean * (norm.cdf(z) - norm.cdf(z_lo)) - sd * (norm.pdf(z) - norm.pdf(z_lo))) / norm_const

    F = cdf(xs)
    P = partial_mean(xs)
    cell_mass = np.diff(F)
    cell_moment = np.diff(P)
    h = np.diff(xs)
    to_right = (cell_moment - xs[:-1] * cell_mass) / h
    to_left = cell_mass - to_right
    mu = np.zeros_like(xs)
    mu[:-1] += to_left
    mu[1:] += to_right
    mu[0] += F[0]
    mu[-1] += 1.0 - F[-1]
    mu = np.maximum(mu, 0.0)
    return mu / mu.sum()
