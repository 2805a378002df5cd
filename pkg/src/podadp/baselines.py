"""Comparison learners: SPAR, tabular Q-learning, RBF actor-critic and REINFORCE.

All of them train on the same instances and are scored by the same
fixed-episode evaluator as the structured actor-critic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exact import ExactSolution
from .model import Instance
from .sac import (Checkpointer, SlopeApprox, TrainConfig, epsilon_greedy_action,
                  implied_threshold, project_slopes, run_sac, sa_update, spawn_streams,
                  stage_and_next)
from .simulation import BasestockPolicy, TablePolicy, sample_trajectory

ALGORITHMS = ("sac", "spar", "ql", "ac", "pg")
SPAR_EPSILON = 2e-3
QL_EPSILON = 0.2


# -- SPAR -------------------------------------------------------------------------------

def lookahead_value(vrow: np.ndarray, r, h: float) -> np.ndarray:
    """``-h r + max_{z >= r} sum_{j <= z} v(j)`` for a concave slope row."""
    cum = np.cumsum(vrow)
    best = np.maximum.accumulate(cum[::-1])[::-1]
    r = np.asarray(r)
    return -h * r + best[r]


def run_spar(inst: Instance, cfg: TrainConfig, exact: ExactSolution | None = None):
    """Slope learning from one-step lookahead on the current approximation.

    Returns ``(slopes, trace)``; the policy is the greedy basestock rule of the slopes.
    """
    cfg.validate()
    rng, eval_seed = spawn_streams(cfg.seed)
    T, R = inst.T, inst.R_max
    eps = cfg.explore_rate(SPAR_EPSILON)
    vbar = SlopeApprox.zeros(inst)
    n_zw = np.zeros((T, inst.n_w, R + 1), dtype=np.int64)
    check = Checkpointer(inst, cfg, exact, "spar", eval_seed)
    thr = vbar.greedy_thresholds()
    check(0, BasestockPolicy(thr), thr)
    for k in range(1, cfg.iters + 1):
        main = sample_trajectory(inst, 0, inst.exo.w0_index, 1, rng)
        z = int(rng.integers(0, R + 1))
        for t in range(T):
            w, d, p = int(main.w[t, 0]), int(main.d[t, 0]), int(main.p[t, 0])
            zs = np.array([z, z - 1]) if z > 0 else np.array([0])
            stage, nxt = stage_and_next(inst, t, d, p, zs)
            if t < T - 1:
                w_next = int(main.w[t + 1, 0])
                cont = lookahead_value(vbar.v[t + 1, w_next], nxt, inst.h)
            else:
                cont = -(inst.b + inst.c) * nxt
            vals = stage + cont
            v_hat = float(vals[0] - vals[1]) if z > 0 else float(vals[0])
            alpha = cfg.stepsize(n_zw[t, w, z])
            n_zw[t, w, z] += 1
            vbar.v[t] = project_slopes(sa_update(vbar.v[t], v_hat, z, w, alpha), z, w)
            if t < T - 1:
                r_next = z - min(z, d)
                greedy = BasestockPolicy(np.array([[implied_threshold(vbar.v[t + 1, w_next])]]))
                z = epsilon_greedy_action(r_next, 0, 0, greedy, eps, R, rng)
        if k % cfg.eval_every == 0 or k == cfg.iters:
            thr = vbar.greedy_thresholds()
            check(k, BasestockPolicy(thr), thr)
    return vbar, check.trace


# -- tabular Q-learning -----------------------------------------------------------------

class QTable:
    """``Q[t][w]`` is an ``(R+1) x (R+1)`` array over ``(r, z)``, created on first touch.

    Infeasible pairs ``z < r`` hold ``-inf`` and are never updated or chosen.
    """

    def __init__(self, T: int, n_w: int, R_max: int):
        self.T, self.n_w, self.R_max = T, n_w, R_max
        self._q: dict[tuple[int, int], np.ndarray] = {}
        self._n: dict[tuple[int, int], np.ndarray] = {}
        rr = np.arange(R_max + 1)
        self._mask = rr[None, :] < rr[:, None]

    def table(self, t: int, w: int) -> np.ndarray:
        key = (t, w)
        if key not in self._q:
            q = np.zeros((self.R_max + 1, self.R_max + 1))
            q[self._mask] = -np.inf
            self._q[key] = q
            self._n[key] = np.zeros((self.R_max + 1, self.R_max + 1), dtype=np.int64)
        return self._q[key]

    def visits(self, t: int, w: int) -> np.ndarray:
        self.table(t, w)
        return self._n[(t, w)]

    def greedy(self, t: int, r: int, w: int) -> int:
        """Smallest maximizing feasible action (untouched rows order nothing)."""
        key = (t, w)
        if key not in self._q:
            return r
        return int(np.argmax(self._q[key][r]))

    def max_value(self, t: int, r: int, w: int) -> float:
        key = (t, w)
        if key not in self._q:
            return 0.0
        return float(self._q[key][r, r:].max())

    def policy_table(self) -> np.ndarray:
        """Greedy actions ``z[t, r, w]``."""
        r = np.arange(self.R_max + 1)
        out = np.repeat(r[None, :, None], self.T, 0).repeat(self.n_w, 2)
        for (t, w), q in self._q.items():
            out[t, :, w] = np.argmax(q, axis=1)
        return out

    def touched(self):
        return sorted(self._q)


def run_qlearning(inst: Instance, cfg: TrainConfig, exact: ExactSolution | None = None):
    """Finite-horizon Q-learning with epsilon-greedy exploration; returns ``(QTable, trace)``."""
    cfg.validate()
    rng, eval_seed = spawn_streams(cfg.seed)
    T, R = inst.T, inst.R_max
    eps = cfg.explore_rate(QL_EPSILON)
    Q = QTable(T, inst.n_w, R)
    check = Checkpointer(inst, cfg, exact, "ql", eval_seed)
    check(0, TablePolicy(Q.policy_table()))
    for k in range(1, cfg.iters + 1):
        main = sample_trajectory(inst, 0, inst.exo.w0_index, 1, rng)
        r = int(rng.integers(0, R + 1))
        for t in range(T):
            w, d, p = int(main.w[t, 0]), int(main.d[t, 0]), int(main.p[t, 0])
            explore = rng.random() < eps
            pick = int(rng.integers(r, R + 1))
            z = pick if explore else Q.greedy(t, r, w)
            stage, r_next = stage_and_next(inst, t, d, p, z)
            reward = -inst.h * r + float(stage)
            r_next = int(r_next)
            if t < T - 1:
                target = reward + Q.max_value(t + 1, r_next, int(main.w[t + 1, 0]))
            else:
                target = reward - (inst.b + inst.c) * r_next
            q, n = Q.table(t, w), Q.visits(t, w)
            alpha = cfg.stepsize(n[r, z])
            n[r, z] += 1
            q[r, z] += alpha * (target - q[r, z])
            r = r_next
        if k % cfg.eval_every == 0 or k == cfg.iters:
            check(k, TablePolicy(Q.policy_table()))
    return Q, check.trace


# -- RBF softmax policies ---------------------------------------------------------------

def rbf_centers(n_points: int, n_centers: int = 8):
    """Centers on ``[0, 1]`` for a grid of ``n_points`` values and the shared width."""
    k = max(1, min(n_centers, n_points))
    centers = np.linspace(0.0, 1.0, k)
    width = 1.0 / (k - 1) if k > 1 else 1.0
    return centers, width


def gaussian_rbf(x, centers, width) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * ((x[..., None] - centers) / width) ** 2)


@dataclass
class RbfPolicyParams:
    """Product Gaussian features over normalized (r, w, z) and per-period weights.

    Critic features are ``g_r(r) x g_w(w)`` plus a bias; actor features append
    ``g_z(z)``, so preferences are ``a(s)^T Theta_t g_z(z)``.
    """

    T: int
    R_max: int
    n_w: int
    n_centers: int = 8
    theta: np.ndarray = field(default=None)    # [t, n_state_features, n_z_features]
    eta: np.ndarray = field(default=None)      # [t, n_state_features + 1]

    def __post_init__(self):
        self.cr, self.wr = rbf_centers(self.R_max + 1, self.n_centers)
        self.cw, self.ww = rbf_centers(self.n_w, self.n_centers)
        self.cz, self.wz = self.cr, self.wr
        ns = self.cr.size * self.cw.size
        if self.theta is None:
            self.theta = np.zeros((self.T, ns, self.cz.size))
        if self.eta is None:
            self.eta = np.zeros((self.T, ns + 1))

    @classmethod
    def for_instance(cls, inst: Instance, n_centers: int = 8) -> "RbfPolicyParams":
        return cls(inst.T, inst.R_max, inst.n_w, n_centers)

    def _norm(self, x, n):
        return np.asarray(x, dtype=float) / max(n - 1, 1)

    def state_features(self, r, w) -> np.ndarray:
        """``a(s)``: flattened outer product of the r and w bumps."""
        r, w = np.broadcast_arrays(r, w)
        gr = gaussian_rbf(self._norm(r, self.R_max + 1), self.cr, self.wr)
        gw = gaussian_rbf(self._norm(w, self.n_w), self.cw, self.ww)
        return (gr[..., :, None] * gw[..., None, :]).reshape(*r.shape, -1)

    def critic_features(self, r, w) -> np.ndarray:
        a = self.state_features(r, w)
        return np.concatenate([a, np.ones(a.shape[:-1] + (1,))], axis=-1)

    def action_features(self) -> np.ndarray:
        """``g_z(z)`` for every action, shape ``[R+1, n_z_features]``."""
        return gaussian_rbf(self._norm(np.arange(self.R_max + 1), self.R_max + 1),
                            self.cz, self.wz)

    def features(self, r, w, z) -> np.ndarray:
        """Full actor feature vector ``phi(s, z)``."""
        return np.outer(self.state_features(r, w), self.action_features()[z]).ravel()

    def preferences(self, t: int, r: int, w: int, theta_t=None) -> np.ndarray:
        th = self.theta[t] if theta_t is None else theta_t
        return self.state_features(r, w) @ th @ self.action_features().T

    def probs(self, t: int, r: int, w: int, theta_t=None) -> np.ndarray:
        return softmax_masked(self.preferences(t, r, w, theta_t), r)

    def grad_log_pi(self, t: int, r: int, w: int, z: int, theta_t=None) -> np.ndarray:
        """``phi(s, z) - E_pi[phi(s, .)]`` reshaped like ``theta[t]``."""
        pi = self.probs(t, r, w, theta_t)
        gz = self.action_features()
        return np.outer(self.state_features(r, w), gz[z] - pi @ gz)

    def log_pi(self, t: int, r: int, w: int, z: int, theta_t=None) -> float:
        return float(np.log(self.probs(t, r, w, theta_t)[z]))

    def greedy_table(self) -> np.ndarray:
        """Most probable action ``z[t, r, w]`` (smallest on ties)."""
        rr = np.arange(self.R_max + 1)
        a = self.state_features(rr[:, None], np.arange(self.n_w)[None, :])   # [r, w, f]
        gz = self.action_features()
        out = np.empty((self.T, self.R_max + 1, self.n_w), dtype=np.int64)
        mask = rr[None, :] < rr[:, None]                                     # [r, z]
        for t in range(self.T):
            pref = np.einsum("rwf,fk,zk->rwz", a, self.theta[t], gz)
            pref = np.where(mask[:, None, :], -np.inf, pref)
            out[t] = np.argmax(pref, axis=2)
        return out

    def to_dict(self) -> dict:
        return {"schema": "podadp.rbf", "version": 1, "T": self.T, "R_max": self.R_max,
                "n_w": self.n_w, "n_centers": self.n_centers,
                "theta": self.theta.tolist(), "eta": self.eta.tolist()}


def softmax_masked(pref: np.ndarray, r: int) -> np.ndarray:
    """Softmax over feasible actions ``z >= r``; infeasible ones get probability 0.

    The maximum feasible preference is subtracted before exponentiation.
    """
    out = np.zeros(pref.shape)
    feas = pref[r:]
    e = np.exp(feas - feas.max())
    out[r:] = e / e.sum()
    return out


@dataclass
class RbfConfig:
    """Extra settings of the linear-architecture learners.

    Rewards are divided by ``c * d_max`` before entering any update; the critic
    uses a normalized step ``alpha / |psi|^2``.
    """

    n_centers: int = 8
    critic_lr: float = 0.5
    actor_lr: float = 0.5
    pg_lr: float = 0.05


def _sample_action(probs: np.ndarray, u: float) -> int:
    return int(min(np.searchsorted(np.cumsum(probs), u, side="right"), probs.size - 1))


def _harmonic(cfg: TrainConfig, k: int) -> float:
    return cfg.step_a / (cfg.step_a + k - 1)


def run_ac_rbf(inst: Instance, cfg: TrainConfig, exact: ExactSolution | None = None,
               rbf: RbfConfig | None = None):
    """TD(0) critic and softmax actor on RBF features; returns ``(params, trace)``."""
    cfg.validate()
    rbf = rbf or RbfConfig()
    rng, eval_seed = spawn_streams(cfg.seed)
    T, R = inst.T, inst.R_max
    scale = inst.c * max(inst.d_max, 1)
    par = RbfPolicyParams.for_instance(inst, rbf.n_centers)
    check = Checkpointer(inst, cfg, exact, "ac", eval_seed)
    check(0, TablePolicy(par.greedy_table()))
    for k in range(1, cfg.iters + 1):
        main = sample_trajectory(inst, 0, inst.exo.w0_index, 1, rng)
        r = int(rng.integers(0, R + 1))
        step = _harmonic(cfg, k)
        for t in range(T):
            w, d, p = int(main.w[t, 0]), int(main.d[t, 0]), int(main.p[t, 0])
            pi = par.probs(t, r, w)
            z = _sample_action(pi, rng.random())
            stage, r_next = stage_and_next(inst, t, d, p, z)
            r_next = int(r_next)
            cost = (-inst.h * r + float(stage)) / scale
            psi = par.critic_features(r, w)
            if t < T - 1:
                nxt = par.critic_features(r_next, int(main.w[t + 1, 0])) @ par.eta[t + 1]
            else:
                nxt = -(inst.b + inst.c) * r_next / scale
            delta = cost + nxt - psi @ par.eta[t]
            grad = par.grad_log_pi(t, r, w, z)
            par.eta[t] += rbf.critic_lr * step * delta * psi / (psi @ psi)
            par.theta[t] += rbf.actor_lr * step * delta * grad
            r = r_next
        if k % cfg.eval_every == 0 or k == cfg.iters:
            check(k, TablePolicy(par.greedy_table()))
    return par, check.trace


def run_pg(inst: Instance, cfg: TrainConfig, exact: ExactSolution | None = None,
           rbf: RbfConfig | None = None):
    """Monte Carlo policy gradient weighted by the sampled reward-to-go; no critic."""
    cfg.validate()
    rbf = rbf or RbfConfig()
    rng, eval_seed = spawn_streams(cfg.seed)
    T, R = inst.T, inst.R_max
    scale = inst.c * max(inst.d_max, 1)
    par = RbfPolicyParams.for_instance(inst, rbf.n_centers)
    check = Checkpointer(inst, cfg, exact, "pg", eval_seed)
    check(0, TablePolicy(par.greedy_table()))
    for k in range(1, cfg.iters + 1):
        main = sample_trajectory(inst, 0, inst.exo.w0_index, 1, rng)
        r = int(rng.integers(0, R + 1))
        step = _harmonic(cfg, k)
        visited, rewards = [], []
        for t in range(T):
            w, d, p = int(main.w[t, 0]), int(main.d[t, 0]), int(main.p[t, 0])
            z = _sample_action(par.probs(t, r, w), rng.random())
            stage, r_next = stage_and_next(inst, t, d, p, z)
            visited.append((t, r, w, z))
            rewards.append((-inst.h * r + float(stage)) / scale)
            r = int(r_next)
        rewards[-1] += -(inst.b + inst.c) * r / scale
        togo = np.cumsum(rewards[::-1])[::-1]
        grads = [par.grad_log_pi(*s) for s in visited]
        for (t, _, _, _), g, G in zip(visited, grads, togo):
            par.theta[t] += rbf.pg_lr * step * G * g
        if k % cfg.eval_every == 0 or k == cfg.iters:
            check(k, TablePolicy(par.greedy_table()))
    return par, check.trace


def train(algo: str, inst: Instance, cfg: TrainConfig, exact: ExactSolution | None = None):
    """Dispatch by algorithm id; returns ``(learned object, trace)``."""
    if algo == "sac":
        v, l, trace = run_sac(inst, cfg, exact)
        return (v, l), trace
    if algo == "spar":
        return run_spar(inst, cfg, exact)
    if algo == "ql":
        return run_qlearning(inst, cfg, exact)
    if algo == "ac":
        return run_ac_rbf(inst, cfg, exact)
    if algo == "pg":
        return run_pg(inst, cfg, exact)
    raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
