"""Exact backward dynamic programming on the slope recursion.

The primary solver propagates post-decision slopes
``v_t(z, w) = V~_t(z, w) - V~_t(z - 1, w)`` backwards; ``v_t(0, w)`` stores
``V~_t(0, w)`` itself so post-decision values are prefix sums. Two
independent value recursions (reformulated and original objective) and a
brute-force policy enumerator back it up for verification.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Instance

DEFAULT_CAP = 10**7


class OutcomeSpaceTooLarge(RuntimeError):
    def __init__(self, size: int, cap: int):
        self.size, self.cap = size, cap
        super().__init__(f"outcome-state pairs {size:,} exceed cap {cap:,}")


def outcome_state_pairs(inst: Instance) -> int:
    """Work measure of exact DP: (t, r, w) states times (w', demand) outcomes."""
    next_w = inst.n_w if inst.T > 1 else 1
    return inst.T * (inst.R_max + 1) * inst.n_w * next_w * (inst.d_max + 1)


@dataclass(frozen=True, eq=False)
class ExactSolution:
    slopes: np.ndarray        # [t, w, z]
    thresholds: np.ndarray    # [t, w]
    V0: float
    instance_hash: str = ""

    @property
    def post_values(self) -> np.ndarray:
        """``V~_t(z, w)`` laid out ``[t, w, z]``."""
        return np.cumsum(self.slopes, axis=2)

    def values(self, h: float) -> np.ndarray:
        """Pre-decision values ``V_t(r, w)`` laid out ``[t, w, r]`` for t < T."""
        post = self.post_values
        best_from = np.maximum.accumulate(post[:, :, ::-1], axis=2)[:, :, ::-1]
        r = np.arange(post.shape[2])
        return -h * r[None, None, :] + best_from

    def policy_table(self) -> np.ndarray:
        """``z[t, r, w] = max(r, l_t(w))``."""
        T, nw, nz = self.slopes.shape
        r = np.arange(nz)[None, :, None]
        return np.maximum(r, self.thresholds[:, None, :])

    def to_dict(self) -> dict:
        T = self.slopes.shape[0]
        return {
            "schema": "podadp.solution",
            "version": 1,
            "instance_hash": self.instance_hash,
            "V0": self.V0,
            "slopes": {str(t): self.slopes[t].T.tolist() for t in range(T)},
            "thresholds": {str(t): {str(w): int(x) for w, x in enumerate(self.thresholds[t])}
                           for t in range(T)},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")), encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExactSolution":
        T = len(doc["slopes"])
        slopes = np.array([np.array(doc["slopes"][str(t)]).T for t in range(T)])
        thr = np.array([[doc["thresholds"][str(t)][str(w)]
                         for w in range(slopes.shape[1])] for t in range(T)], dtype=np.int64)
        return cls(slopes, thr, float(doc["V0"]), doc.get("instance_hash", ""))

    @classmethod
    def load(cls, path) -> "ExactSolution":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def greedy_policy_from_slopes(slopes, tol: float = 1e-9) -> np.ndarray:
    """Smallest maximizer of the prefix sums of each slope row.

    Accepts a single row ``[z]`` or any stack ``[..., z]``. Column 0 holds a
    value, not a slope, so it never affects the argmax; rows must be
    nonincreasing from column 1 on (up to ``tol``).
    """
    v = np.asarray(slopes, dtype=float)
    if np.any(np.diff(v[..., 1:], axis=-1) > tol):
        raise ValueError("slope rows are not nonincreasing in z >= 1")
    sums = np.zeros(v.shape)
    np.cumsum(v[..., 1:], axis=-1, out=sums[..., 1:])
    out = np.argmax(sums, axis=-1)
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


def backward_dp(inst: Instance, cap: int = DEFAULT_CAP) -> ExactSolution:
    """Optimal slopes, basestock thresholds and ``V_0(s_0)`` by full enumeration."""
    size = outcome_state_pairs(inst)
    if size > cap:
        raise OutcomeSpaceTooLarge(size, cap)
    T, nw, R = inst.T, inst.n_w, inst.R_max
    c, h, b = inst.c, inst.h, inst.b
    z = np.arange(R + 1)
    d = np.arange(inst.d_max + 1)
    covered = (z[None, :] <= d[:, None]).astype(float)   # [d, z]: z <= D
    shift = z[None, :] - d[:, None]                        # R_{t+1} when z > D
    over = shift > 0
    shift_idx = np.where(over, shift, 0)

    v = np.zeros((T, nw, R + 1))
    for t in range(T - 1, -1, -1):
        pmf = inst.demand_pmf[t]                             # [w, d]
        base = pmf @ inst.mean_marginal[t] + (pmf @ covered) * (b if t == T - 1 else h - c)
        if t == T - 1:
            v[t] = -(b + c) + base
            v[t, :, 0] = 0.0
            continue
        K = inst.exo.kernels[t]
        g = K @ np.minimum(v[t + 1], 0.0)                    # [w, r]
        cont = np.empty((nw, R + 1))
        for w in range(nw):
            cont[w] = pmf[w] @ np.where(over, g[w][shift_idx], 0.0)
        v[t] = -h + base + cont
        best_next = _best_post_value(v[t + 1])               # V_{t+1}(0, w')
        v[t, :, 0] = K @ best_next
    thresholds = greedy_policy_from_slopes(v)
    w0 = inst.exo.w0_index
    V0 = float(np.sum(v[0, w0, : thresholds[0, w0] + 1]))
    return ExactSolution(v, thresholds, V0, inst.content_hash())


def _best_post_value(v_row_stack: np.ndarray) -> np.ndarray:
    l = greedy_policy_from_slopes(v_row_stack)
    sums = np.cumsum(v_row_stack, axis=-1)
    return np.take_along_axis(sums, l[..., None], -1)[..., 0]


# -- independent recursions used for verification --------------------------------------

def _expected_tables(inst: Instance, t: int):
    """E[U(z) - c*sold | w] and P(R' = r, W' = w' | z, w) by literal enumeration."""
    nw, R = inst.n_w, inst.R_max
    reward = np.zeros((nw, R + 1))
    util = np.zeros((nw, R + 1))
    trans = np.zeros((nw, R + 1, R + 1, nw if t < inst.T - 1 else 1))
    zz = np.arange(R + 1)
    for w in range(nw):
        pmf = inst.demand_pmf[t, w]
        knext = inst.exo.kernels[t, w] if t < inst.T - 1 else np.ones(1)
        for dem in np.flatnonzero(pmf > 0):
            sold = np.minimum(zz, dem)
            for p in range(inst.n_patterns):
                u = inst.cum_utility[t, dem, p, sold]
                q = pmf[dem] / inst.n_patterns
                util[w] += q * u
                reward[w] += q * (u - inst.c * sold)
            trans[w, zz, zz - sold, :] += pmf[dem] * knext[None, :]
    return reward, util, trans


def value_recursion(inst: Instance):
    """Reformulated Bellman recursion on values; returns ``V[t, w, r]`` for t = 0..T."""
    T, nw, R = inst.T, inst.n_w, inst.R_max
    r = np.arange(R + 1)
    V = np.zeros((T + 1, nw, R + 1))
    V[T] = -(inst.b + inst.c) * r[None, :]
    post = np.zeros((T, nw, R + 1))
    for t in range(T - 1, -1, -1):
        reward, _, trans = _expected_tables(inst, t)
        nxt = V[t + 1].T if t < T - 1 else V[T][:1].T           # [r', w']
        post[t] = reward + np.einsum("wzrv,rv->wz", trans, nxt)
        best = np.maximum.accumulate(post[t][:, ::-1], axis=1)[:, ::-1]
        V[t] = -inst.h * r[None, :] + best
    return V, post


def original_value_recursion(inst: Instance) -> np.ndarray:
    """Bellman recursion of the original objective (order cost at ordering time)."""
    T, nw, R = inst.T, inst.n_w, inst.R_max
    c, h = inst.c, inst.h
    r = np.arange(R + 1)
    V = np.zeros((T + 1, nw, R + 1))
    V[T] = -inst.b * r[None, :]
    for t in range(T - 1, -1, -1):
        _, util, trans = _expected_tables(inst, t)
        nxt = V[t + 1].T if t < T - 1 else V[T][:1].T
        q = -c * r[None, :] + util + np.einsum("wzrv,rv->wz", trans, nxt)   # [w, z]
        best = np.maximum.accumulate(q[:, ::-1], axis=1)[:, ::-1]
        V[t] = (c - h) * r[None, :] + best
    return V


@dataclass(frozen=True)
class ReformulationReport:
    max_identity_gap: float       # |V_t - (V_t^orig - c r)|
    max_slope_gap: float          # |V_t from slopes - V_t from values|
    V0_gap: float

    @property
    def ok(self) -> bool:
        return max(self.max_identity_gap, self.max_slope_gap, self.V0_gap) < 1e-9


def verify_reformulation(inst: Instance, sol: ExactSolution | None = None) -> ReformulationReport:
    """Cross-check the slope solver against both value recursions."""
    sol = sol if sol is not None else backward_dp(inst)
    V, _ = value_recursion(inst)
    V_orig = original_value_recursion(inst)
    r = np.arange(inst.R_max + 1)
    identity = np.max(np.abs(V - (V_orig - inst.c * r[None, None, :])))
    from_slopes = sol.values(inst.h)
    slope_gap = np.max(np.abs(from_slopes - V[: inst.T]))
    scale = max(1.0, np.max(np.abs(V)))
    return ReformulationReport(float(identity / scale), float(slope_gap / scale),
                               float(abs(sol.V0 - V[0, inst.exo.w0_index, 0]) / scale))


def policy_value(inst: Instance, table) -> np.ndarray:
    """Exact value ``V^pi_t(r, w)`` (layout ``[t, w, r]``) of a table policy ``z[t, r, w]``."""
    T, nw, R = inst.T, inst.n_w, inst.R_max
    table = np.asarray(table, dtype=np.int64)
    r = np.arange(R + 1)
    V = np.zeros((T + 1, nw, R + 1))
    V[T] = -(inst.b + inst.c) * r[None, :]
    for t in range(T - 1, -1, -1):
        reward, _, trans = _expected_tables(inst, t)
        nxt = V[t + 1].T if t < T - 1 else V[T][:1].T
        post = reward + np.einsum("wzrv,rv->wz", trans, nxt)
        z = table[t].T                                        # [w, r]
        V[t] = -inst.h * r[None, :] + np.take_along_axis(post, z, 1)
    return V


def count_policies(inst: Instance) -> int:
    """Deterministic Markov policies that differ on s_0 or on any state at t >= 1."""
    per_period = 1
    for rr in range(inst.R_max + 1):
        per_period *= (inst.R_max + 1 - rr) ** inst.n_w
    return (inst.R_max + 1) * per_period ** (inst.T - 1)


def brute_force_optimum(inst: Instance, max_policies: int = 500_000) -> float:
    """Best ``V^pi_0(s_0)`` over every deterministic Markov policy, by enumeration.

    Each period's decision rule is enumerated explicitly; the values of all
    rule combinations are carried backwards without any maximization, and the
    maximum is taken only once, at the initial state.
    """
    n = count_policies(inst)
    if n > max_policies:
        raise OutcomeSpaceTooLarge(n, max_policies)
    T, nw, R = inst.T, inst.n_w, inst.R_max
    r = np.arange(R + 1)
    choices = [range(rr, R + 1) for rr in r] * nw             # per (w, r) cell
    rules = np.array(list(itertools.product(*choices)), dtype=np.int64).reshape(-1, nw, R + 1)
    # combos[j] : values V^pi_{t}(w, r) for every combination of rules at t..T-1
    combos = np.tile(-(inst.b + inst.c) * r.astype(float), (1, nw, 1))
    for t in range(T - 1, 0, -1):
        reward, _, trans = _expected_tables(inst, t)
        nxt = combos.transpose(0, 2, 1) if t < T - 1 else combos[:, :1].transpose(0, 2, 1)
        post = reward[None] + np.einsum("wzrv,nrv->nwz", trans, nxt)   # [combo, w, z]
        picked = np.take_along_axis(post[:, None, :, :], rules[None, :, :, :], 3)   # [c, rule, w, r]
        vals = -inst.h * r[None, None, None, :] + picked
        combos = vals.reshape(-1, nw, R + 1)
    reward, _, trans = _expected_tables(inst, 0)
    nxt = combos.transpose(0, 2, 1) if T > 1 else combos[:, :1].transpose(0, 2, 1)
    w0 = inst.exo.w0_index
    post0 = reward[w0][None] + np.einsum("zrv,nrv->nz", trans[w0], nxt)
    return float(post0.max())


def reachable_states(inst: Instance) -> np.ndarray:
    """``ok[t, w]``: prediction state ``w`` has positive probability in period ``t``."""
    ok = np.zeros((inst.T, inst.n_w), dtype=bool)
    dist = np.zeros(inst.n_w)
    dist[inst.exo.w0_index] = 1.0
    for t in range(inst.T):
        ok[t] = dist > 0
        if t < inst.T - 1:
            dist = dist @ inst.exo.kernels[t]
    return ok
