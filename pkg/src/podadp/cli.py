"""Command-line entry point: ``podadp <command> [options]``.

Every run writes into a fresh directory ``<out>/<command>-<hash12>-<n>``
where the hash covers the deterministic run description. Files other than
``run_info.txt`` and ``timing.csv`` are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import ALGORITHMS, train
from .evaluation import CIRow, ci_experiment, write_csv
from .exact import (DEFAULT_CAP, ExactSolution, OutcomeSpaceTooLarge, backward_dp,
                    verify_reformulation)
from .instances import (BenchmarkSpec, CaseStudySpec, build_case_study, coverage_analysis,
                        gen_benchmark, load_claims, benchmark_dimensions, weekly_simulation)
from .model import Instance
from .sac import EVAL_EVERY, TraceRow, TrainConfig, run_sac

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_IO = 0, 2, 3, 4
CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def read_config(path) -> dict:
    """JSON config with an optional ``version`` field (must equal 1 when present)."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {doc.get('version')}")
    return doc


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunDir:
    """Fresh output directory keyed by the hash of the run description."""

    def __init__(self, root, command: str, description: dict):
        self.command = command
        self.description = {"command": command, "package_version": __version__, **description}
        self.hash = hashlib.sha256(_dump(self.description).encode()).hexdigest()
        root = Path(root)
        n = 0
        while (root / f"{command}-{self.hash[:12]}-{n}").exists():
            n += 1
        self.path = root / f"{command}-{self.hash[:12]}-{n}"
        self.path.mkdir(parents=True)
        self.files: list[str] = []
        self.t0 = time.time()

    def file(self, name: str) -> Path:
        self.files.append(name)
        return self.path / name

    def finish(self) -> None:
        outputs = {name: _file_digest(self.path / name) for name in sorted(self.files)
                   if name not in ("timing.csv",)}
        manifest = {"schema": "podadp.manifest", "version": 1, "manifest_hash": self.hash,
                    **self.description, "outputs": outputs}
        (self.path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True)
                                                 + "\n", encoding="utf-8")
        started = time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.t0))
        (self.path / "run_info.txt").write_text(
            f"manifest_hash {self.hash}\nstarted {started}\n"
            f"elapsed_seconds {time.time() - self.t0:.3f}\n", encoding="utf-8")
        print(self.path)


def _load_instance(path) -> Instance:
    try:
        return Instance.load(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed instance file {path}: {exc}") from exc


def _write_trace(run: RunDir, trace) -> None:
    write_csv(run.file("trace.csv"), ("algorithm",) + TraceRow.HEADER,
              [[trace.algorithm] + row.csv_row() for row in trace.rows])
    write_csv(run.file("timing.csv"), ("algorithm", "iteration", "elapsed_seconds"),
              [[trace.algorithm, row.iteration, f"{el:.6f}"]
               for row, el in zip(trace.rows, trace.elapsed)])


def _save_json(path, doc) -> None:
    Path(path).write_text(_dump(doc), encoding="utf-8")


def _exact_or_none(inst: Instance, path=None, cap: int = DEFAULT_CAP):
    if path is not None:
        return ExactSolution.load(path)
    try:
        return backward_dp(inst, cap)
    except OutcomeSpaceTooLarge:
        return None


# -- commands ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    doc = read_config(args.config)
    if args.size is not None:
        doc["size"] = args.size
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = BenchmarkSpec.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    inst = gen_benchmark(spec)
    run = RunDir(args.out, "generate", {"spec": asdict(spec)})
    inst.save(run.file("instance.json"))
    _save_json(run.file("dimensions.json"), benchmark_dimensions(inst))
    run.finish()
    return EXIT_OK


def cmd_solve_exact(args) -> int:
    inst = _load_instance(args.instance)
    try:
        sol = backward_dp(inst, args.cap)
    except OutcomeSpaceTooLarge as exc:
        print(f"refused: instance {inst.name} needs {exc.size:,} outcome-state evaluations "
              f"(cap {exc.cap:,}; T={inst.T}, R_max={inst.R_max}, |W|={inst.n_w}, "
              f"D_max={inst.d_max})", file=sys.stderr)
        return EXIT_CAP
    run = RunDir(args.out, "solve-exact", {"instance_hash": inst.content_hash(), "cap": args.cap})
    sol.save(run.file("solution.json"))
    if args.verify:
        rep = verify_reformulation(inst, sol)
        _save_json(run.file("verification.json"), asdict(rep) | {"ok": rep.ok})
        if not rep.ok:
            print(f"reformulation check failed: {rep}", file=sys.stderr)
    run.finish()
    return EXIT_OK


def _train_config(args, inst: Instance) -> TrainConfig:
    doc = read_config(args.config)
    for key, val in (("iters", args.iters), ("seed", args.seed), ("eval_every", args.eval_every),
                     ("epsilon", args.epsilon), ("eval_episodes", args.eval_episodes)):
        if val is not None:
            doc[key] = val
    if "eval_every" not in doc:
        size = inst.meta.get("spec", {}).get("size") if isinstance(inst.meta, dict) else None
        doc["eval_every"] = EVAL_EVERY.get(size, 20)
    try:
        cfg = TrainConfig.from_dict(doc)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cmd_train(args) -> int:
    inst = _load_instance(args.instance)
    cfg = _train_config(args, inst)
    exact = _exact_or_none(inst, args.exact)
    run = RunDir(args.out, "train", {"instance_hash": inst.content_hash(), "algo": args.algo,
                                     "config": asdict(cfg),
                                     "exact_hash": None if exact is None else exact.instance_hash})
    learned, trace = train(args.algo, inst, cfg, exact)
    _write_trace(run, trace)
    if args.algo == "sac":
        slopes, thresholds = learned
        _save_json(run.file("slopes.json"), slopes.to_dict())
        _save_json(run.file("thresholds.json"), thresholds.to_dict())
    elif args.algo == "spar":
        _save_json(run.file("slopes.json"), learned.to_dict())
    elif args.algo == "ql":
        _save_json(run.file("policy.json"), {"schema": "podadp.table_policy", "version": 1,
                                             "table": learned.policy_table().tolist()})
    else:
        _save_json(run.file("rbf.json"), learned.to_dict())
    run.finish()
    return EXIT_OK


def cmd_case_study(args) -> int:
    doc = read_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = CaseStudySpec.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        claims = load_claims(args.data)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    insts = build_case_study(spec, claims)
    data_digest = _file_digest(args.data) if args.data else "bundled"
    run = RunDir(args.out, "case-study", {"spec": asdict(spec), "data": data_digest,
                                          "iters": args.iters, "weeks": args.weeks})
    policies, thresholds = {}, {}
    for j, (day, inst) in enumerate(insts.items()):
        cfg = TrainConfig(iters=args.iters, eval_every=max(args.iters, 1),
                          eval_episodes=1000, seed=spec.seed * 1000 + j)
        _, lbar, _ = run_sac(inst, cfg)
        policies[day] = lbar.policy()
        thresholds[day] = lbar.to_dict()
    _save_json(run.file("thresholds.json"), thresholds)
    outcomes = weekly_simulation(insts, policies, args.weeks,
                                 np.random.default_rng([spec.seed, 7919]))
    write_csv(run.file("weekly_outcomes.csv"), ("D1", "D2", "D", "Q1", "Q2", "Q"),
              outcomes.rows())
    cov = coverage_analysis(outcomes.Q, spec.budget_multipliers, spec.prices, spec.p_base)
    write_csv(run.file("coverage.csv"), ("budget", "price", "probability"),
              [[repr(float(b)), repr(float(p)), repr(float(q))] for b, p, q in cov.rows()])
    run.finish()
    return EXIT_OK


def cmd_ci(args) -> int:
    inst = _load_instance(args.instance)
    cfg = _train_config(args, inst)
    algos = args.algos.split(",")
    for a in algos:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}")
    if args.seeds < 2:
        raise ConfigError("need at least two seeds")
    exact = _exact_or_none(inst, args.exact)
    if exact is None:
        raise ConfigError("optimality ratios need an exact solution; instance exceeds the cap")
    seeds = [cfg.seed + i for i in range(args.seeds)]
    run = RunDir(args.out, "ci", {"instance_hash": inst.content_hash(), "algos": algos,
                                  "config": asdict(cfg), "seeds": seeds, "level": args.level})
    rows = []
    for a in algos:
        for row in ci_experiment(a, inst, cfg, exact, seeds, args.level, args.threads):
            rows.append([a, row.iteration, repr(float(row.mean)), repr(float(row.ci_low)),
                         repr(float(row.ci_high)), row.n_seeds])
    write_csv(run.file("ci.csv"), CIRow.HEADER, rows)
    run.finish()
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="podadp",
        description="Replenishment planning for points of dispensing: exact DP, S-AC and baselines.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a benchmark instance")
    g.add_argument("--size", choices=["Small", "Medium", "Large"])
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.add_argument("--out", default="runs")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve-exact", help="exact backward DP")
    s.add_argument("--instance", required=True)
    s.add_argument("--cap", type=int, default=DEFAULT_CAP)
    s.add_argument("--verify", action="store_true", help="also run the reformulation check")
    s.add_argument("--out", default="runs")
    s.set_defaults(func=cmd_solve_exact)

    def training_flags(p):
        p.add_argument("--instance", required=True)
        p.add_argument("--iters", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--eval-every", type=int)
        p.add_argument("--eval-episodes", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--config")
        p.add_argument("--exact", help="solution.json to score against")
        p.add_argument("--out", default="runs")

    t = sub.add_parser("train", help="train one algorithm")
    training_flags(t)
    t.add_argument("--algo", required=True, choices=ALGORITHMS)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("case-study", help="daily naloxone models, weekly outcomes and coverage")
    c.add_argument("--config")
    c.add_argument("--data", help="claims CSV (zip, day, claims); defaults to bundled data")
    c.add_argument("--iters", type=int, default=2000)
    c.add_argument("--weeks", type=int, default=10000)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", default="runs")
    c.set_defaults(func=cmd_case_study)

    q = sub.add_parser("ci", help="confidence intervals of optimality across seeds")
    training_flags(q)
    q.add_argument("--algos", default="sac,spar")
    q.add_argument("--seeds", type=int, default=20)
    q.add_argument("--level", type=float, default=0.99)
    q.add_argument("--threads", type=int, default=1)
    q.set_defaults(func=cmd_ci)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
