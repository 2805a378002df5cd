"""Structured actor-critic: concave slope critic plus basestock-threshold actor."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exact import ExactSolution, greedy_policy_from_slopes
from .model import Instance
from .simulation import (BasestockPolicy, Trajectory, rollout, round_half_up,
                         sample_next_w, sample_trajectory)

SAC_EPSILON = 0.2
# evaluation cadence by benchmark size tag
EVAL_EVERY = {"Small": 20, "Medium": 100, "Large": 1000}


@dataclass
class TrainConfig:
    """Training budget, stepsizes ``a / (a + n)`` over visit counts, exploration and evaluation."""

    iters: int = 2000
    epsilon: float | None = None      # None: the algorithm's own default
    step_a: float = 20.0
    eval_every: int = 20
    eval_episodes: int = 1000
    seed: int = 0

    def validate(self) -> None:
        if self.iters < 0:
            raise ValueError("iters must be nonnegative")
        if self.epsilon is not None and not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.step_a <= 0:
            raise ValueError("stepsize constant must be positive")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("eval_every and eval_episodes must be positive")

    def explore_rate(self, default: float) -> float:
        return default if self.epsilon is None else self.epsilon

    def stepsize(self, visits) -> np.ndarray | float:
        """``a / (a + n)`` where ``n`` counts earlier visits; equals 1 on the first visit."""
        return self.step_a / (self.step_a + visits)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = {k: v for k, v in doc.items() if k != "version"}
        return cls(**doc)


@dataclass
class SlopeApprox:
    """Slope table ``v[t, w, z]``; column ``z = 0`` holds a value estimate."""

    v: np.ndarray

    @classmethod
    def zeros(cls, inst: Instance) -> "SlopeApprox":
        return cls(np.zeros((inst.T, inst.n_w, inst.R_max + 1)))

    def is_concave(self) -> bool:
        return not np.any(np.diff(self.v[:, :, 1:], axis=2) > 0)

    def greedy_thresholds(self) -> np.ndarray:
        return greedy_policy_from_slopes(self.v)

    def to_dict(self) -> dict:
        return {"schema": "podadp.slopes", "version": 1,
                "slopes": {str(t): self.v[t].T.tolist() for t in range(self.v.shape[0])}}

    @classmethod
    def from_dict(cls, doc: dict) -> "SlopeApprox":
        T = len(doc["slopes"])
        return cls(np.array([np.array(doc["slopes"][str(t)], dtype=float).T for t in range(T)]))


@dataclass
class ThresholdApprox:
    """Real-valued thresholds ``l[t, w]`` in ``[0, R_max]``; acts via half-up rounding."""

    l: np.ndarray
    R_max: int

    @classmethod
    def zeros(cls, inst: Instance) -> "ThresholdApprox":
        return cls(np.zeros((inst.T, inst.n_w)), inst.R_max)

    def rounded(self) -> np.ndarray:
        return round_half_up(self.l)

    def policy(self) -> BasestockPolicy:
        return BasestockPolicy(self.l)

    def act(self, t, r, w):
        return np.maximum(r, round_half_up(self.l[t, w]))

    def to_dict(self) -> dict:
        return {"schema": "podadp.thresholds", "version": 1, "R_max": self.R_max,
                "thresholds": {str(t): self.l[t].tolist() for t in range(self.l.shape[0])}}

    @classmethod
    def from_dict(cls, doc: dict) -> "ThresholdApprox":
        T = len(doc["thresholds"])
        return cls(np.array([doc["thresholds"][str(t)] for t in range(T)], dtype=float),
                   int(doc["R_max"]))


# -- single-step operations -------------------------------------------------------------

def simulate_policy_value(policy, t: int, r, traj: Trajectory | None, inst: Instance):
    """Value of ``policy`` from ``(t, r)`` along a realized path; ``traj=None`` means t = T."""
    if traj is None or t >= inst.T:
        return -(inst.b + inst.c) * np.asarray(r, dtype=float)
    if traj.t0 != t:
        raise ValueError("trajectory must start at period t")
    return rollout(inst, policy, traj, r)


def stage_and_next(inst: Instance, t: int, d: int, p: int, z):
    """``U(z) - c * sold`` and the next stock ``z - sold`` for one realized batch."""
    u, sold = inst.dispense_value(t, d, p, z)
    return u - inst.c * sold, z - sold


def observe_slope(z: int, t: int, d: int, p: int, inst: Instance, policy,
                  continuation: Trajectory | None) -> float:
    """``V^(z) - V^(z-1)`` with one batch and one continuation path for both terms.

    ``V^(-1) = 0``, so ``z = 0`` returns ``V^(0)``. ``continuation`` starts at
    ``t + 1`` and is ignored (may be None) in the last period.
    """
    zs = np.array([z, z - 1]) if z > 0 else np.array([0])
    stage, nxt = stage_and_next(inst, t, d, p, zs)
    vals = stage + simulate_policy_value(policy, t + 1, nxt, continuation, inst)
    return float(vals[0] - vals[1]) if z > 0 else float(vals[0])


def sa_update(vbar: np.ndarray, v_hat: float, z_obs: int, w_obs: int, alpha: float) -> np.ndarray:
    """Smooth one cell of a ``[w, z]`` slope table toward the observation."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("stepsize must lie in (0, 1]")
    out = vbar.copy()
    out[w_obs, z_obs] = (1.0 - alpha) * vbar[w_obs, z_obs] + alpha * v_hat
    return out


def concavity_projection(vtilde: np.ndarray, z_obs: int, w_obs: int) -> np.ndarray:
    """Restore monotonicity around the observed cell of a ``[w, z]`` table.

    Cells left of ``z_obs`` below the observed value are raised to it, cells
    right of it above the observed value are lowered to it; other rows and
    the observed cell are untouched.
    """
    out = vtilde.copy()
    row = out[w_obs]
    val = row[z_obs]
    row[:z_obs] = np.maximum(row[:z_obs], val)
    row[z_obs + 1:] = np.minimum(row[z_obs + 1:], val)
    return out


def project_slopes(vtilde: np.ndarray, z_obs: int, w_obs: int) -> np.ndarray:
    """Projection used in training: only the slope columns ``z >= 1`` take part.

    Column 0 is a value estimate and is only ever changed by its own update.
    """
    if z_obs == 0:
        return vtilde.copy()
    out = vtilde.copy()
    out[:, 1:] = concavity_projection(vtilde[:, 1:], z_obs - 1, w_obs)
    return out


def implied_threshold(vbar_row: np.ndarray) -> int:
    """Smallest maximizer over z of the prefix sums of a concave slope row."""
    return greedy_policy_from_slopes(vbar_row)


def threshold_update(lbar: np.ndarray, l_hat: float, w_obs: int, beta: float,
                     R_max: int) -> np.ndarray:
    """Convex combination at ``w_obs``, clamped to ``[0, R_max]``."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("stepsize must lie in (0, 1]")
    out = lbar.copy()
    out[w_obs] = min(max((1.0 - beta) * lbar[w_obs] + beta * l_hat, 0.0), float(R_max))
    return out


def epsilon_greedy_action(r: int, w: int, t: int, policy, eps: float, R_max: int,
                          rng: np.random.Generator) -> int:
    """Greedy basestock action with probability ``1 - eps``, else uniform on ``{r..R_max}``.

    Draws exactly two uniforms per call so the stream position does not depend
    on the branch taken.
    """
    explore = rng.random() < eps
    pick = int(rng.integers(r, R_max + 1))
    if explore:
        return pick
    return int(np.asarray(policy.act(t, np.asarray(r), np.asarray(w))))


# -- training loop ----------------------------------------------------------------------

@dataclass
class TraceRow:
    iteration: int
    value: float
    se: float
    kappa: float
    threshold_error: float
    thresholds: list = field(default_factory=list)

    HEADER = ("iteration", "value", "se", "kappa", "mean_threshold_abs_error")

    def csv_row(self):
        return [self.iteration, repr(float(self.value)), repr(float(self.se)),
                repr(float(self.kappa)), repr(float(self.threshold_error))]


@dataclass
class Trace:
    algorithm: str
    rows: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)     # wall clock per checkpoint, kept apart

    def kappas(self) -> np.ndarray:
        return np.array([row.kappa for row in self.rows])


class Checkpointer:
    """Evaluates a policy on a fixed bank of episodes at each checkpoint."""

    def __init__(self, inst: Instance, cfg: TrainConfig, exact: ExactSolution | None,
                 algorithm: str, eval_rng_seed):
        from .evaluation import EpisodeBank
        self.inst, self.cfg, self.exact = inst, cfg, exact
        self.bank = EpisodeBank(inst, cfg.eval_episodes, np.random.default_rng(eval_rng_seed))
        self.trace = Trace(algorithm)
        self.t_start = time.perf_counter()

    def __call__(self, k: int, policy, thresholds=None) -> None:
        from .evaluation import kappa as kappa_of
        rep = self.bank.evaluate(policy)
        kap = kappa_of(rep, self.exact) if self.exact is not None else float("nan")
        err = float("nan")
        snap = []
        if thresholds is not None:
            snap = np.asarray(thresholds, dtype=float).round(6).tolist()
            if self.exact is not None:
                err = float(np.mean(np.abs(np.asarray(thresholds) - self.exact.thresholds)))
        self.trace.rows.append(TraceRow(k, rep.mean, rep.se, kap, err, snap))
        self.trace.elapsed.append(time.perf_counter() - self.t_start)


def spawn_streams(seed: int):
    """(training, evaluation) generator seeds derived from one integer seed."""
    train, evaluation = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(train), evaluation


def run_sac(inst: Instance, cfg: TrainConfig, exact: ExactSolution | None = None,
            slopes: SlopeApprox | None = None, thresholds: ThresholdApprox | None = None):
    """Structured actor-critic training; returns ``(slopes, thresholds, trace)``."""
    cfg.validate()
    rng, eval_seed = spawn_streams(cfg.seed)
    T, R = inst.T, inst.R_max
    vbar = SlopeApprox.zeros(inst) if slopes is None else SlopeApprox(slopes.v.copy())
    lbar = ThresholdApprox.zeros(inst) if thresholds is None else ThresholdApprox(
        thresholds.l.copy(), thresholds.R_max)
    eps = cfg.explore_rate(SAC_EPSILON)
    n_zw = np.zeros((T, inst.n_w, R + 1), dtype=np.int64)
    n_w = np.zeros((T, inst.n_w), dtype=np.int64)
    check = Checkpointer(inst, cfg, exact, "sac", eval_seed)
    check(0, lbar.policy(), lbar.l)

    for k in range(1, cfg.iters + 1):
        main = sample_trajectory(inst, 0, inst.exo.w0_index, 1, rng)
        z = int(rng.integers(0, R + 1))
        policy = lbar.policy()              # frozen for the whole iteration
        for t in range(T):
            w, d, p = int(main.w[t, 0]), int(main.d[t, 0]), int(main.p[t, 0])
            cont = None
            if t < T - 1:
                cont = sample_trajectory(inst, t + 1, sample_next_w(w, t, inst, rng), 1, rng)
            v_hat = observe_slope(z, t, d, p, inst, policy, cont)
            alpha = cfg.stepsize(n_zw[t, w, z])
            n_zw[t, w, z] += 1
            vt = sa_update(vbar.v[t], v_hat, z, w, alpha)
            vbar.v[t] = project_slopes(vt, z, w)
            l_hat = implied_threshold(vbar.v[t, w])
            beta = cfg.stepsize(n_w[t, w])
            n_w[t, w] += 1
            lbar.l[t] = threshold_update(lbar.l[t], l_hat, w, beta, R)
            if t < T - 1:
                r_next = z - min(z, d)
                z = epsilon_greedy_action(r_next, int(main.w[t + 1, 0]), t + 1, policy,
                                          eps, R, rng)
        if k % cfg.eval_every == 0 or k == cfg.iters:
            check(k, lbar.policy(), lbar.l)
    return vbar, lbar, check.trace


def save_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, separators=(",", ":"), sort_keys=True),
                          encoding="utf-8")
