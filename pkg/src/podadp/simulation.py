"""Sampling primitives and vectorized policy rollouts.

Every stochastic function takes an explicit ``numpy.random.Generator`` and
draws from it in a fixed order, so equal seeds give bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .model import Instance, PatientBatch
from .stochastic import inverse_cdf_sample


class Policy(Protocol):
    """Deterministic replenish-up-to rule, vectorized over states."""

    def act(self, t: int, r: np.ndarray, w: np.ndarray) -> np.ndarray: ...


def sample_demand(inst: Instance, t: int, w, rng: np.random.Generator):
    """Total demand and stored-pattern index for prediction state(s) ``w``."""
    w = np.atleast_1d(w)
    d = inverse_cdf_sample(inst.demand_cdf[t, w], rng.random(w.size))
    p = rng.integers(0, inst.n_patterns, size=w.size)
    return d, p


def sample_batch(w: int, t: int, inst: Instance, rng: np.random.Generator) -> PatientBatch:
    """Draw one period's batch: total from the discretized normal, then a stored split."""
    d, p = sample_demand(inst, t, w, rng)
    return inst.batch(t, int(d[0]), int(p[0]))


def sample_next_w(w, t: int, inst: Instance, rng: np.random.Generator):
    """Next exogenous state index(es) from ``kernels[t]``."""
    if t >= inst.T - 1:
        raise ValueError("no transition out of the last period")
    w_arr = np.atleast_1d(w)
    nxt = inverse_cdf_sample(inst.kernel_cdf[t, w_arr], rng.random(w_arr.size))
    return int(nxt[0]) if np.ndim(w) == 0 else nxt


def enumerate_outcomes(w: int, t: int, inst: Instance):
    """Full outcome law at ``(t, w)``: list of ``(w_next, d, p, prob)``.

    ``w_next`` is None in the last period.
    """
    pmf = inst.demand_pmf[t, w]
    pat = 1.0 / inst.n_patterns
    nexts = [(None, 1.0)] if t == inst.T - 1 else [
        (j, q) for j, q in enumerate(inst.exo.kernels[t, w]) if q > 0]
    out = []
    for j, q in nexts:
        for d in np.flatnonzero(pmf > 0):
            for p in range(inst.n_patterns):
                out.append((j, int(d), p, q * pmf[d] * pat))
    return out


@dataclass(frozen=True)
class Trajectory:
    """Exogenous path and batches for periods ``t0 .. T-1``; arrays are ``(L, n)``."""

    t0: int
    w: np.ndarray
    d: np.ndarray
    p: np.ndarray

    @property
    def n(self) -> int:
        return self.w.shape[1]


def sample_trajectory(inst: Instance, t0: int, w_start, n: int,
                      rng: np.random.Generator) -> Trajectory:
    """Sample ``n`` independent paths starting in state(s) ``w_start`` at period ``t0``."""
    length = inst.T - t0
    w = np.empty((length, n), dtype=np.int64)
    d = np.empty_like(w)
    p = np.empty_like(w)
    cur = np.broadcast_to(np.asarray(w_start, dtype=np.int64), (n,)).copy()
    for j, t in enumerate(range(t0, inst.T)):
        w[j] = cur
        d[j], p[j] = sample_demand(inst, t, cur, rng)
        if t < inst.T - 1:
            cur = inverse_cdf_sample(inst.kernel_cdf[t, cur], rng.random(n))
    return Trajectory(t0, w, d, p)


def rollout(inst: Instance, policy: Policy, traj: Trajectory, r0) -> np.ndarray:
    """Value of following ``policy`` along ``traj`` from pre-decision stock ``r0``.

    Each period contributes ``-h r + U(z) - c * dispensed`` and the terminal
    stock is charged ``(b + c)`` per unit, matching the reformulated Bellman
    recursion (so expectations equal the exact policy value). ``r0`` may be a
    vector sharing one path (``traj.n == 1``) or one entry per path.
    """
    r = np.array(np.broadcast_to(r0, np.broadcast_shapes(np.shape(r0), (traj.n,))),
                 dtype=np.int64)
    total = np.zeros(r.shape)
    for j, t in enumerate(range(traj.t0, inst.T)):
        w = np.broadcast_to(traj.w[j], r.shape)
        z = policy.act(t, r, w)
        d = np.broadcast_to(traj.d[j], r.shape)
        u, sold = inst.dispense_value(t, d, np.broadcast_to(traj.p[j], r.shape), z)
        total += -inst.h * r + u - inst.c * sold
        r = z - sold
    return total - (inst.b + inst.c) * r


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


class BasestockPolicy:
    """``z = max(r, round(level[t, w]))`` with half-up rounding."""

    def __init__(self, levels):
        self.levels = np.array(levels, dtype=float)
        self._int = round_half_up(self.levels)

    def act(self, t, r, w):
        return np.maximum(r, self._int[t, w])


class TablePolicy:
    """Lookup policy ``table[t, r, w]``; entries must satisfy ``z >= r``."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.int64)
        r = np.arange(self.table.shape[1])[None, :, None]
        if np.any(self.table < r):
            raise ValueError("table policy orders below current stock")

    def act(self, t, r, w):
        return self.table[t, r, w]


class FunctionPolicy:
    """Adapter for a plain callable ``f(t, r, w) -> z``."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def act(self, t, r, w):
        return np.asarray(self.fn(t, r, w), dtype=np.int64)
