"""Benchmark instance family and the naloxone case-study builder."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .model import DemandModel, ExogenousModel, Instance, UtilityTable, make_patterns
from .simulation import Policy, sample_trajectory

# size tag -> (R_max, prediction levels, patients per period)
BENCHMARK_SIZES = {
    "Small": (100, np.arange(39, 42), 20),
    "Medium": (100, np.arange(15, 65), 20),
    "Large": (200, np.arange(10, 251), 60),
}


@dataclass(frozen=True)
class BenchmarkSpec:
    """Benchmark family parameters; random ranges are fractions of the mean demand."""

    size: str = "Small"
    seed: int = 0
    T: int = 10
    c: float = 7.0
    h: float = 2.0
    b: float = 0.0
    A_max: int = 5
    classes: tuple = (0.2, 0.4, 0.4)
    class_gaps: tuple = (3.0, 2.0, 1.0)
    phi_range: tuple = (0.6, 0.95)
    sigma_frac: tuple = (0.05, 0.15)
    demand_sd_frac: tuple = (0.05, 0.15)
    n_patterns: int = 10

    def __post_init__(self):
        if self.size not in BENCHMARK_SIZES:
            raise ValueError(f"unknown size tag {self.size!r}; choose from {list(BENCHMARK_SIZES)}")

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchmarkSpec":
        doc = dict(doc)
        doc.pop("version", None)
        for key in ("classes", "class_gaps", "phi_range", "sigma_frac", "demand_sd_frac"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def benchmark_dimensions(inst: Instance) -> dict:
    """State space (R_max+1)|W|, action space R_max+1, outcome space |W|."""
    return {"state_space": (inst.R_max + 1) * inst.n_w,
            "action_space": inst.R_max + 1,
            "outcome_space": inst.n_w}


def benchmark_utilities(n_classes: int, a_max: int, c: float, gaps, rng) -> UtilityTable:
    """``du(y) = c + gap_k (A - y + 1) + U(0, 1)``, sorted decreasing in y."""
    du = np.full((n_classes, a_max + 1, a_max), np.nan)
    for k in range(n_classes):
        for a in range(1, a_max + 1):
            y = np.arange(1, a + 1)
            vals = c + gaps[k] * (a - y + 1) + rng.uniform(0.0, 1.0, size=a)
            du[k, a, :a] = np.sort(vals)[::-1]
    return UtilityTable(du)


def gen_benchmark(spec: BenchmarkSpec) -> Instance:
    """Deterministic benchmark instance for a size tag and seed."""
    rng = np.random.default_rng(spec.seed)
    R_max, levels, m = BENCHMARK_SIZES[spec.size]
    mu = float(np.mean(levels))
    phi = rng.uniform(*spec.phi_range, size=spec.T - 1)
    sigma = mu * rng.uniform(*spec.sigma_frac, size=spec.T - 1)
    dsd = mu * rng.uniform(*spec.demand_sd_frac, size=spec.T)
    w0 = int(levels[np.argmin(np.abs(levels - mu))])
    exo = ExogenousModel.from_ar1(levels, np.full(spec.T, mu), phi, sigma, w0)
    util = benchmark_utilities(len(spec.classes), spec.A_max, spec.c, spec.class_gaps, rng)
    xi, req = make_patterns(spec.T, m, spec.A_max, spec.classes, spec.n_patterns, rng)
    return Instance(T=spec.T, R_max=R_max, m=m, A_max=spec.A_max, c=spec.c, h=spec.h,
                    b=spec.b, exo=exo, demand=DemandModel(dsd), utility=util,
                    classes=spec.classes, patterns_xi=xi, patterns_req=req,
                    name=f"benchmark-{spec.size}-{spec.seed}", meta={"spec": asdict(spec)})


def gen_random(rng: np.random.Generator, T: int = 2, R_max: int = 4, n_w: int = 2, m: int = 2,
               A_max: int = 1, n_classes: int = 2, n_patterns: int = 3,
               c: float | None = None, h: float | None = None, b: float | None = None) -> Instance:
    """Small random instance for oracle checks (random kernel, costs and utilities)."""
    c = float(rng.uniform(1.0, 5.0)) if c is None else c
    h = float(rng.uniform(0.0, c)) if h is None else h
    b = float(rng.uniform(0.0, 3.0)) if b is None else b
    base = int(rng.integers(0, max(1, m * A_max - n_w + 2)))
    levels = np.arange(base, base + n_w)
    kern = rng.dirichlet(np.ones(n_w), size=(max(T - 1, 0), n_w))
    exo = ExogenousModel(levels, kern.reshape(-1, n_w, n_w), int(rng.choice(levels)))
    demand = DemandModel(rng.uniform(0.3, 2.0, size=T))
    du = np.full((n_classes, A_max + 1, A_max), np.nan)
    for k in range(n_classes):
        for a in range(1, A_max + 1):
            du[k, a, :a] = np.sort(c + rng.uniform(0.05, 6.0, size=a))[::-1]
    classes = rng.dirichlet(np.ones(n_classes))
    classes = classes / classes.sum()
    classes[-1] = 1.0 - classes[:-1].sum()
    xi, req = make_patterns(T, m, A_max, classes, n_patterns, rng)
    return Instance(T=T, R_max=R_max, m=m, A_max=A_max, c=c, h=h, b=b, exo=exo,
                    demand=demand, utility=UtilityTable(du), classes=classes,
                    patterns_xi=xi, patterns_req=req, name="random")


# -- naloxone case study ---------------------------------------------------------------

DAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday")


@dataclass(frozen=True)
class CaseStudySpec:
    """Case-study parameters; demand means come from claims x kits-per-claim."""

    R_max: int = 300
    levels: int = 31
    A_max: int = 1
    m: int = 40
    lam: tuple = (0.4, 0.6)
    wtp_per_kit: float = 144.0
    c: float = 8.0
    h: float = 1.0
    b: float = 1.0
    kits_per_claim: float = 0.6
    phi: float = 0.5
    sigma_frac: float = 0.15
    demand_sd_frac: float = 0.1
    sd_floor: float = 1.0
    n_patterns: int = 10
    seed: int = 0
    p_base: float = 20.34
    budget_multipliers: tuple = (0.75, 1.0, 1.1, 1.25, 1.5, 2.0)
    prices: tuple = (20.34, 22.0, 24.0, 26.0, 28.0, 30.0, 35.0, 40.0, 62.29, 142.49)

    def __post_init__(self):
        if abs(sum(self.lam) - 1.0) > 1e-12:
            raise ValueError("class arrival probabilities must sum to 1")

    def marginal_utilities(self) -> tuple[float, ...]:
        """Per-kit utility ``WTP / (2 lambda_k)`` (linear utilities, offset a = 0)."""
        return tuple(self.wtp_per_kit / (2.0 * lam) for lam in self.lam)

    @classmethod
    def from_dict(cls, doc: dict) -> "CaseStudySpec":
        doc = dict(doc)
        doc.pop("version", None)
        for key in ("lam", "budget_multipliers", "prices"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def load_schedule() -> list[dict]:
    """Bundled weekly schedule: rows of (day, slot, location, zip)."""
    text = resources.files("podadp.data").joinpath("schedule.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_claims(source=None) -> dict[tuple[str, str], float]:
    """Claims CSV with columns ``zip, day, claims``; defaults to the bundled synthetic file."""
    if source is None:
        text = resources.files("podadp.data").joinpath("claims_synthetic.csv").read_text(
            encoding="utf-8")
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    need = {"zip", "day", "claims"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ValueError(f"claims data must have columns {sorted(need)}, got {reader.fieldnames}")
    out: dict[tuple[str, str], float] = {}
    for row in reader:
        key = (row["zip"].strip(), row["day"].strip())
        out[key] = out.get(key, 0.0) + float(row["claims"])
    return out


def slot_means(schedule, claims, spec: CaseStudySpec) -> dict[str, list[float]]:
    """Mean kits per scheduled slot: kits/claim x claims of the slot's zip codes."""
    by_day: dict[str, dict[int, float]] = {}
    for row in schedule:
        day, slot = row["day"], int(row["slot"])
        if day not in DAYS:
            raise ValueError(f"malformed schedule: unknown day {day!r}")
        kits = spec.kits_per_claim * claims.get((str(row["zip"]), day), 0.0)
        by_day.setdefault(day, {}).setdefault(slot, 0.0)
        by_day[day][slot] += kits
    if not by_day:
        raise ValueError("schedule is empty")
    top = spec.levels - 1
    return {day: [min(float(top), slots[s]) for s in sorted(slots)]
            for day, slots in by_day.items()}


def build_case_study(spec: CaseStudySpec, claims=None, schedule=None) -> dict[str, Instance]:
    """One MDP per scheduled day; periods are that day's location slots."""
    schedule = load_schedule() if schedule is None else schedule
    claims = load_claims() if claims is None else claims
    means = slot_means(schedule, claims, spec)
    du_vals = spec.marginal_utilities()
    du = np.array([[[np.nan], [v]] for v in du_vals])
    util = UtilityTable(du)
    levels = np.arange(spec.levels)
    out = {}
    for i, day in enumerate(d for d in DAYS if d in means):
        mu = np.asarray(means[day])
        T = mu.size
        rng = np.random.default_rng([spec.seed, i])
        sig = np.maximum(spec.sd_floor, spec.sigma_frac * mu[1:])
        w0 = int(round(mu[0]))
        exo = ExogenousModel.from_ar1(levels, mu, np.full(T - 1, spec.phi), sig, w0)
        dsd = np.maximum(spec.sd_floor, spec.demand_sd_frac * mu)
        xi, req = make_patterns(T, spec.m, spec.A_max, spec.lam, spec.n_patterns, rng)
        out[day] = Instance(T=T, R_max=spec.R_max, m=spec.m, A_max=spec.A_max, c=spec.c,
                            h=spec.h, b=spec.b, exo=exo, demand=DemandModel(dsd),
                            utility=util, classes=spec.lam, patterns_xi=xi, patterns_req=req,
                            name=f"naloxone-{day}", meta={"slot_means": mu.tolist()})
    return out


@dataclass
class WeeklyOutcomes:
    """Per-week samples; arrays have one entry per simulated week."""

    D1: np.ndarray
    D2: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    Q: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return self.D1 + self.D2

    def rows(self):
        for vals in zip(self.D1, self.D2, self.D, self.Q1, self.Q2, self.Q):
            yield [int(v) for v in vals]


def weekly_simulation(instances: dict[str, Instance], policies: dict[str, Policy],
                      n_weeks: int, rng: np.random.Generator) -> WeeklyOutcomes:
    """Simulate ``n_weeks`` weeks; each day starts empty and runs its own episode.

    ``Q`` counts every unit dispensed plus the stock left at the end of each day.
    """
    tot = {k: np.zeros(n_weeks, dtype=np.int64) for k in ("D1", "D2", "Q1", "Q2", "Q")}
    for day, inst in instances.items():
        pol = policies[day]
        traj = sample_trajectory(inst, 0, inst.exo.w0_index, n_weeks, rng)
        r = np.zeros(n_weeks, dtype=np.int64)
        for t in range(inst.T):
            w, d, p = traj.w[t], traj.d[t], traj.p[t]
            z = pol.act(t, r, w)
            sold = np.minimum(z, d)
            served = inst.cum_class_units[t, d, p, sold]           # [n, classes]
            req = inst.patterns_req[t, d, p]                         # [n, m]
            xi = inst.patterns_xi[t, d, p]
            tot["D1"] += np.where(xi == 0, req, 0).sum(axis=1)
            tot["D2"] += np.where(xi == 1, req, 0).sum(axis=1)
            tot["Q1"] += served[:, 0]
            tot["Q2"] += served[:, 1]
            tot["Q"] += sold
            r = z - sold
        tot["Q"] += r
    return WeeklyOutcomes(**tot)


@dataclass(frozen=True)
class CoverageTable:
    base_budget: float
    budgets: np.ndarray
    prices: np.ndarray
    prob: np.ndarray          # [budget, price]

    def rows(self):
        for i, bud in enumerate(self.budgets):
            for j, pr in enumerate(self.prices):
                yield [float(bud), float(pr), float(self.prob[i, j])]


def coverage_analysis(q_samples, budget_multipliers, prices, p_base: float = 20.34) -> CoverageTable:
    """``P(Q <= B / p)`` from the empirical distribution of weekly induced demand.

    The base budget is ``p_base * max(Q)`` so coverage is exactly 1 at ``p_base``;
    budgets are multiples of it.
    """
    q = np.sort(np.asarray(q_samples, dtype=np.int64))
    if q.size == 0:
        raise ValueError("need at least one sample")
    prices = np.asarray(prices, dtype=float)
    if np.any(prices <= 0):
        raise ValueError("prices must be positive")
    base = p_base * float(q[-1])
    budgets = base * np.asarray(budget_multipliers, dtype=float)
    # Q is integer: Q <= B/p  <=>  Q <= floor(B/p); guard float noise at exact multiples
    cap = np.floor(budgets[:, None] / prices[None, :] + 1e-9)
    prob = np.searchsorted(q, cap, side="right") / q.size
    return CoverageTable(base, budgets, prices, prob)
