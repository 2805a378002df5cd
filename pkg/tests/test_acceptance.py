"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Seeds are fixed so every number reported here is reproducible.
"""

import csv
import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, random_batch, random_utility
from podadp.baselines import RbfPolicyParams, run_ac_rbf, run_pg, run_qlearning
from podadp.cli import EXIT_OK, main
from podadp.dispensing import solve_dispensing
from podadp.exact import (backward_dp, brute_force_optimum, count_policies,
                          original_value_recursion, reachable_states, value_recursion)
from podadp.instances import gen_random
from podadp.sac import TrainConfig, concavity_projection, run_sac

BRUTE_CAP = 500_000


def report(num: int, name: str, ok: bool, detail: str, capsys) -> None:
    line = f"criterion {num} {'PASS' if ok else 'FAIL'}: {name}; {detail}"
    ACCEPTANCE_RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module")
def capped_instances():
    """At least 50 random instances small enough for policy enumeration."""
    rng = np.random.default_rng(20240)
    out = []
    while len(out) < 60:
        T, R, nw = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 3))
        inst = gen_random(rng, T=T, R_max=R, n_w=nw, m=int(rng.integers(1, 3)), A_max=1)
        if count_policies(inst) <= BRUTE_CAP:
            out.append(inst)
    return out


# -- 1 ------------------------------------------------------------------------------------

def _brute_force_value(z, batch, util) -> float:
    """Enumerate every allocation with ``sum(y) <= z`` using per-patient utility tables."""
    tabs = [np.array([util.utility(int(k), int(a), y) for y in range(int(a) + 1)])
            for k, a in zip(batch.xi, batch.req)]
    best = 0.0
    for y in itertools.product(*[range(t.size) for t in tabs]):
        if sum(y) <= z:
            best = max(best, sum(t[yi] for t, yi in zip(tabs, y)))
    return best


def test_criterion_1_dispensing_oracle(capsys):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    mismatches = 0
    n = 10_000
    for _ in range(n):
        m, a_max = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        n_classes = int(rng.integers(1, 4))
        c = float(rng.integers(0, 5))
        util = random_utility(rng, n_classes, a_max, c)
        batch = random_batch(rng, m, a_max, n_classes)
        z = int(rng.integers(0, 9))
        _, got = solve_dispensing(z, batch, util)
        if got != _brute_force_value(z, batch, util):
            mismatches += 1
    el = time.perf_counter() - t0
    report(1, "dispensing greedy vs brute force", mismatches == 0 and el < 10.0,
           f"{n} cases, {mismatches} mismatches, {el:.1f} s (limit 10 s)", capsys)


# -- 2 ------------------------------------------------------------------------------------

def test_criterion_2_exact_dp_oracle(capped_instances, capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for inst in capped_instances:
        worst = max(worst, abs(backward_dp(inst).V0 - brute_force_optimum(inst, BRUTE_CAP)))
    el = time.perf_counter() - t0
    report(2, "backward DP vs policy enumeration", worst <= 1e-9 and el < 120.0,
           f"{len(capped_instances)} instances, max |dV0| = {worst:.2e} (tol 1e-9), "
           f"{el:.1f} s (limit 120 s)", capsys)


# -- 3 ------------------------------------------------------------------------------------

def test_criterion_3_structure(capped_instances, small_bench, capsys):
    extra = [gen_random(np.random.default_rng(s), T=4, R_max=8, n_w=3, m=3, A_max=2)
             for s in range(20)]
    violations = 0
    count = 0
    for inst in [small_bench[0], *capped_instances, *extra]:
        sol = backward_dp(inst)
        V, _ = value_recursion(inst)
        violations += int(np.sum(np.diff(sol.slopes[:, :, 1:], axis=2) > 0))
        violations += int(np.sum(np.diff(V, axis=2) > 0))
        count += 1
    report(3, "slopes and values nonincreasing", violations == 0,
           f"{count} solved instances, {violations} violations", capsys)


# -- 4 ------------------------------------------------------------------------------------

def test_criterion_4_reformulation(capped_instances, capsys):
    worst = 0.0
    for inst in capped_instances:
        V, _ = value_recursion(inst)
        Vo = original_value_recursion(inst)
        r = np.arange(inst.R_max + 1)
        worst = max(worst, float(np.max(np.abs(V - (Vo - inst.c * r[None, None, :])))))
        sol = backward_dp(inst)
        worst = max(worst, float(np.max(np.abs(sol.values(inst.h) - V[: inst.T]))))
    report(4, "reformulated vs original recursion", worst < 1e-9,
           f"{len(capped_instances)} instances, max abs discrepancy {worst:.2e} (tol 1e-9)",
           capsys)


# -- 5 ------------------------------------------------------------------------------------

def test_criterion_5_sac_convergence(small_bench, capsys):
    t0 = time.perf_counter()
    inst, sol = small_bench
    cfg = TrainConfig(iters=2000, eval_every=2000, eval_episodes=1000, seed=0)
    _, _, trace = run_sac(inst, cfg, sol)
    kap = trace.kappas()[-1]
    # threshold recovery on enumeration-sized instances
    tiny = [gen_random(np.random.default_rng(s), T=3, R_max=2, n_w=2, m=2, A_max=1)
            for s in (5, 6)]
    tiny.append(gen_random(np.random.default_rng(3), T=2, R_max=4, n_w=2, m=2, A_max=1))
    err_reach, err_all = 0.0, 0.0
    for ti in tiny:
        assert count_policies(ti) <= BRUTE_CAP
        ts = backward_dp(ti)
        _, lbar, _ = run_sac(ti, TrainConfig(iters=5000, eval_every=5000, eval_episodes=100,
                                             seed=0), ts)
        gap = np.abs(lbar.l - ts.thresholds)
        err_all = max(err_all, float(gap.max()))
        err_reach = max(err_reach, float(gap[reachable_states(ti)].max()))
    el = time.perf_counter() - t0
    ok = kap >= 0.90 and err_reach <= 1.0 and el < 600.0
    report(5, "S-AC convergence", ok,
           f"Small seed 0 kappa = {kap:.4f} after 2000 iterations (need >= 0.90); "
           f"max threshold error {err_reach:.3f} over reachable (t, w) after 5000 iterations "
           f"(need <= 1; {err_all:.3f} including never-visited cells); {el:.0f} s (limit 600 s)",
           capsys)


# -- 6 ------------------------------------------------------------------------------------

def _literal_projection(v, z_obs, w_obs):
    out = v.copy()
    val = v[w_obs, z_obs]
    for w in range(v.shape[0]):
        for z in range(v.shape[1]):
            if w == w_obs and z < z_obs and v[w, z] < val:
                out[w, z] = val
            elif w == w_obs and z > z_obs and v[w, z] > val:
                out[w, z] = val
    return out


def test_criterion_6_projection(capsys):
    rng = np.random.default_rng(6)
    bad_match = bad_idem = 0
    n = 10_000
    for _ in range(n):
        nw, nz = int(rng.integers(1, 5)), int(rng.integers(1, 12))
        v = rng.normal(0, 5, size=(nw, nz))
        if rng.random() < 0.3:
            v = np.round(v)                 # ties
        z_obs, w_obs = int(rng.integers(0, nz)), int(rng.integers(0, nw))
        got = concavity_projection(v, z_obs, w_obs)
        bad_match += not np.array_equal(got, _literal_projection(v, z_obs, w_obs))
        bad_idem += not np.array_equal(concavity_projection(got, z_obs, w_obs), got)
    report(6, "projection matches literal definition and is idempotent",
           bad_match == 0 and bad_idem == 0,
           f"{n} tables, {bad_match} mismatches, {bad_idem} idempotence failures", capsys)


# -- 7 ------------------------------------------------------------------------------------

def _ql_mismatches(inst, seed):
    sol = backward_dp(inst)
    cfg = TrainConfig(iters=100_000, step_a=1.0, eval_every=100_000, eval_episodes=100,
                      seed=seed)
    Q, _ = run_qlearning(inst, cfg, sol)
    post = sol.post_values
    checked = bad = 0
    for t in range(inst.T):
        for w in range(inst.n_w):
            n = Q.visits(t, w).sum(axis=1)
            for r in np.flatnonzero(n >= 100):
                best = post[t, w, r:].max()
                z = Q.greedy(t, int(r), w)
                checked += 1
                bad += post[t, w, z] < best - 1e-9
    return checked, bad


def _fd_gap(par, rng, n_states=40):
    worst = 0.0
    h = 1e-6
    for _ in range(n_states):
        t = int(rng.integers(0, par.T))
        r = int(rng.integers(0, par.R_max + 1))
        w = int(rng.integers(0, par.n_w))
        z = int(rng.integers(r, par.R_max + 1))
        theta = par.theta[t]
        g = par.grad_log_pi(t, r, w, z, theta)
        num = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            tp, tm = theta.copy(), theta.copy()
            tp[idx] += h
            tm[idx] -= h
            num[idx] = (par.log_pi(t, r, w, z, tp) - par.log_pi(t, r, w, z, tm)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-300)))
    return worst


def test_criterion_7_baselines(tiny, capsys):
    # gate: the designated tiny instance, five independent training seeds
    checked = bad = 0
    for seed in range(5):
        c, b = _ql_mismatches(tiny[0], seed)
        checked += c
        bad += b
    # reported, not gated: a three-period instance with near-tied actions
    stress = gen_random(np.random.default_rng(5), T=3, R_max=2, n_w=2, m=2, A_max=1)
    s_checked, s_bad = _ql_mismatches(stress, 0)
    # gradients at trained, nonzero parameters
    inst = tiny[0]
    cfg = TrainConfig(iters=300, eval_every=300, eval_episodes=20, seed=0)
    ac, _ = run_ac_rbf(inst, cfg)
    pg, _ = run_pg(inst, cfg)
    rng = np.random.default_rng(7)
    rand = RbfPolicyParams(2, 6, 2)
    rand.theta = rng.normal(0, 2.0, rand.theta.shape)
    gap = max(_fd_gap(ac, rng), _fd_gap(pg, rng), _fd_gap(rand, rng))
    ok = checked > 0 and bad == 0 and gap <= 1e-6
    report(7, "Q-learning policy and RBF log-gradients", ok,
           f"Q-learning on the tiny instance: {bad} of {checked} (state, seed) pairs visited "
           f">= 100 times disagree with the exact argmax set; near-tie stress instance "
           f"(not gated): {s_bad} of {s_checked}; max relative finite-difference gap "
           f"{gap:.1e} (tol 1e-6)", capsys)


# -- 8 ------------------------------------------------------------------------------------

def _read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_criterion_8_case_study(tmp_path, capsys):
    t0 = time.perf_counter()
    code = main(["case-study", "--iters", "2000", "--weeks", "10000", "--seed", "0",
                 "--out", str(tmp_path)])
    capsys.readouterr()
    assert code == EXIT_OK
    run = next(tmp_path.glob("case-study-*"))
    head, weekly = _read(run / "weekly_outcomes.csv")
    col = {k: weekly[:, i] for i, k in enumerate(head)}
    ok1, ok2 = col["D1"] > 0, col["D2"] > 0
    r1 = float(np.mean(col["Q1"][ok1] / col["D1"][ok1]))
    r2 = float(np.mean(col["Q2"][ok2] / col["D2"][ok2]))
    _, cov = _read(run / "coverage.csv")
    budgets, prices = np.unique(cov[:, 0]), np.unique(cov[:, 1])
    table = cov[:, 2].reshape(budgets.size, prices.size)
    mono_price = bool(np.all(np.diff(table, axis=1) <= 0))
    mono_budget = bool(np.all(np.diff(table, axis=0) >= 0))
    base_row = int(np.argmin(np.abs(budgets - budgets.min() / 0.75)))
    at_base = float(table[base_row, list(prices).index(20.34)])
    el = time.perf_counter() - t0
    ok = r1 > r2 and mono_price and mono_budget and at_base == 1.0 and el < 900.0
    report(8, "case-study properties", ok,
           f"E[Q1/D1] = {r1:.4f} vs E[Q2/D2] = {r2:.4f}; coverage monotone in price "
           f"{mono_price}, in budget {mono_budget}; coverage at $20.34 and base budget "
           f"{at_base}; {el:.0f} s (limit 900 s)", capsys)


# -- 9 ------------------------------------------------------------------------------------

def _outputs(path: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())
            if p.suffix in (".csv", ".json") and p.name != "timing.csv"}


def test_criterion_9_determinism(tmp_path, capsys):
    gen = tmp_path / "gen"
    assert main(["generate", "--size", "Small", "--seed", "0", "--out", str(gen)]) == EXIT_OK
    inst = str(next(gen.glob("generate-*")) / "instance.json")
    commands = [
        ["generate", "--size", "Small", "--seed", "3"],
        ["solve-exact", "--instance", inst, "--verify"],
        *[["train", "--instance", inst, "--algo", a, "--iters", "40", "--eval-every", "20",
           "--eval-episodes", "100", "--seed", "2"] for a in ("sac", "spar", "ql", "ac", "pg")],
        ["case-study", "--iters", "50", "--weeks", "300", "--seed", "1"],
        ["ci", "--instance", inst, "--algos", "sac,spar", "--seeds", "2", "--iters", "20",
         "--eval-every", "10", "--eval-episodes", "50"],
    ]
    differing = []
    for i, cmd in enumerate(commands):
        outs = []
        for rep in range(2):
            root = tmp_path / f"c{i}-{rep}"
            assert main(cmd + ["--out", str(root)]) == EXIT_OK
            outs.append(_outputs(next(root.iterdir())))
        if outs[0] != outs[1] or not outs[0]:
            differing.append(cmd[0])
    capsys.readouterr()
    report(9, "repeated commands give byte-identical CSV/JSON", not differing,
           f"{len(commands)} commands run twice; differing: {differing or 'none'} "
           f"(timing.csv holds wall-clock times and is excluded)", capsys)
