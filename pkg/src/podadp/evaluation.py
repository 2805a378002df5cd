"""Monte Carlo policy evaluation, optimality ratios and replication confidence intervals."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import Instance
from .simulation import rollout, sample_trajectory


@dataclass(frozen=True)
class EvalReport:
    mean: float
    se: float
    n: int
    kappa: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    level: float = 0.95

    HEADER = ("mean", "se", "n", "kappa", "ci_low", "ci_high", "level")

    def csv_row(self):
        return [repr(float(self.mean)), repr(float(self.se)), self.n, repr(float(self.kappa)),
                repr(float(self.ci_low)), repr(float(self.ci_high)), repr(float(self.level))]


def _mean(x: np.ndarray) -> float:
    """Compensated mean, shifted by the first sample so equal samples give it exactly."""
    return float(x[0]) + math.fsum(x - x[0]) / x.size


def summarize(values, level: float = 0.95) -> EvalReport:
    """Mean with compensated summation, standard error and a normal-theory interval."""
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if n < 1:
        raise ValueError("need at least one replication")
    mean = _mean(x)
    se = math.sqrt(math.fsum((x - mean) ** 2) / (n - 1) / n) if n > 1 else float("nan")
    half = stats.norm.ppf(0.5 + level / 2) * se if n > 1 else float("nan")
    return EvalReport(mean, se, n, ci_low=mean - half, ci_high=mean + half, level=level)


class EpisodeBank:
    """Fixed set of episodes from ``s_0 = (0, w_0)``, reused to score many policies."""

    def __init__(self, inst: Instance, n: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("need at least one replication")
        self.inst = inst
        self.traj = sample_trajectory(inst, 0, inst.exo.w0_index, n, rng)

    def values(self, policy) -> np.ndarray:
        return rollout(self.inst, policy, self.traj, 0)

    def evaluate(self, policy, level: float = 0.95) -> EvalReport:
        return summarize(self.values(policy), level)


def evaluate_policy(policy, inst: Instance, n: int, rng: np.random.Generator,
                    level: float = 0.95) -> EvalReport:
    """Average of ``n`` independent episode values from ``(r_0 = 0, w_0)``."""
    return EpisodeBank(inst, n, rng).evaluate(policy, level)


def kappa(report: EvalReport, exact) -> float:
    """Plain ratio ``V^pi_0(s_0) / V_0(s_0)``."""
    v0 = exact.V0 if hasattr(exact, "V0") else float(exact)
    if v0 == 0:
        raise ZeroDivisionError("optimal value is zero; optimality ratio undefined")
    return report.mean / v0


@dataclass(frozen=True)
class CIRow:
    iteration: int
    mean: float
    ci_low: float
    ci_high: float
    n_seeds: int

    HEADER = ("algorithm", "iteration", "mean_kappa", "ci_low", "ci_high", "n_seeds")


def t_interval(samples, level: float = 0.99) -> tuple[float, float, float]:
    """Student-t interval across replications: ``(mean, low, high)``."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two replications")
    mean = _mean(x)
    sd = math.sqrt(math.fsum((x - mean) ** 2) / (x.size - 1))
    half = stats.t.ppf(0.5 + level / 2, x.size - 1) * sd / math.sqrt(x.size)
    return mean, mean - half, mean + half


def ci_table(kappa_by_seed, iterations, level: float = 0.99) -> list[CIRow]:
    """Per-checkpoint t intervals from an ``[seed, checkpoint]`` array."""
    arr = np.asarray(kappa_by_seed, dtype=float)
    out = []
    for j, it in enumerate(iterations):
        m, lo, hi = t_interval(arr[:, j], level)
        out.append(CIRow(int(it), m, lo, hi, arr.shape[0]))
    return out


def _train_one(args):
    from .baselines import train
    algo, inst, cfg, exact = args
    _, trace = train(algo, inst, cfg, exact)
    return [row.iteration for row in trace.rows], trace.kappas()


def ci_experiment(algorithm: str, inst: Instance, cfg, exact, seeds, level: float = 0.99,
                  threads: int = 1) -> list[CIRow]:
    """Train once per seed and report per-checkpoint mean optimality with t intervals.

    Results are collected in seed order, so they do not depend on ``threads``.
    """
    from dataclasses import replace
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    jobs = [(algorithm, inst, replace(cfg, seed=int(s)), exact) for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    iterations = results[0][0]
    return ci_table(np.array([k for _, k in results]), iterations, level)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)
