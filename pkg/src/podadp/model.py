"""Instance data for the inventory-control and dispensing MDP.

Conventions used throughout the package:

* exogenous states are referred to by their *index* into
  ``Instance.exo.states``; the integer level itself is the demand prediction;
* classes are labelled ``0..K-1``;
* slope and threshold tables are laid out ``[t, w, z]`` and ``[t, w]``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .stochastic import ar1_kernel, discretize

SCHEMA_VERSION = 1


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class UtilityTable:
    """Marginal utilities ``du[k, A, y-1]`` for class ``k``, request ``A``, unit ``y``.

    Entries with ``y > A`` are NaN. ``u_{k,A}(0) = 0`` by convention so the
    marginals fully determine the utility.
    """

    marginals: np.ndarray

    def __post_init__(self):
        du = np.array(self.marginals, dtype=float)
        if du.ndim != 3 or du.shape[1] != du.shape[2] + 1:
            raise ValueError("marginals must have shape (classes, A_max + 1, A_max)")
        a_max = du.shape[2]
        for a in range(a_max + 1):
            if np.any(np.isnan(du[:, a, :a])):
                raise ValueError(f"missing marginal utility for request {a}")
            du[:, a, a:] = np.nan
        object.__setattr__(self, "marginals", _frozen(du))

    @property
    def n_classes(self) -> int:
        return self.marginals.shape[0]

    @property
    def a_max(self) -> int:
        return self.marginals.shape[2]

    def marginal(self, k: int, a: int) -> np.ndarray:
        return self.marginals[k, a, :a]

    def utility(self, k: int, a: int, y: int) -> float:
        if not 0 <= y <= a:
            raise ValueError(f"allocation {y} outside 0..{a}")
        return float(np.sum(self.marginals[k, a, :y]))

    def violations(self, unit_cost: float = 0.0) -> list[str]:
        """Human-readable violations of concavity and of marginal utility above cost."""
        out = []
        for k in range(self.n_classes):
            for a in range(1, self.a_max + 1):
                du = self.marginal(k, a)
                if np.any(np.diff(du) > 0):
                    out.append(f"class {k}, request {a}: marginals increase")
                if np.any(du <= unit_cost):
                    out.append(f"class {k}, request {a}: marginal <= unit cost {unit_cost}")
        return out

    def validate(self, unit_cost: float = 0.0) -> None:
        bad = self.violations(unit_cost)
        if bad:
            raise ValueError("utility table must be concave with marginals above cost: " + "; ".join(bad[:5]))

    @classmethod
    def from_functions(cls, funcs, a_max: int) -> "UtilityTable":
        """Build from callables ``funcs[k](a, y) -> u_{k,a}(y)``."""
        du = np.full((len(funcs), a_max + 1, a_max), np.nan)
        for k, f in enumerate(funcs):
            for a in range(a_max + 1):
                for y in range(1, a + 1):
                    du[k, a, y - 1] = f(a, y) - f(a, y - 1)
        return cls(du)


@dataclass(frozen=True, eq=False)
class ExogenousModel:
    """Finite Markov chain of demand predictions.

    ``kernels[t]`` is the transition matrix from period ``t`` to ``t + 1``;
    there are ``T - 1`` of them.
    """

    states: np.ndarray
    kernels: np.ndarray
    w0: int

    def __post_init__(self):
        states = _frozen(self.states, np.int64)
        if states.ndim != 1 or states.size == 0 or np.any(np.diff(states) <= 0):
            raise ValueError("states must be a nonempty increasing integer vector")
        n = states.size
        k = np.array(self.kernels, dtype=float)
        if k.size == 0:
            k = k.reshape(0, n, n)
        if k.ndim != 3 or k.shape[1:] != (n, n):
            raise ValueError(f"kernels must have shape (T-1, {n}, {n})")
        if np.any(k < 0) or not np.allclose(k.sum(axis=2), 1.0, atol=1e-10, rtol=0):
            raise ValueError("kernel rows must be nonnegative and sum to 1")
        if int(self.w0) not in set(states.tolist()):
            raise ValueError(f"initial state {self.w0} not in the state set")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "kernels", _frozen(k))
        object.__setattr__(self, "w0", int(self.w0))

    @property
    def n(self) -> int:
        return self.states.size

    @property
    def w0_index(self) -> int:
        return int(np.searchsorted(self.states, self.w0))

    @classmethod
    def homogeneous(cls, states, kernel, w0: int, horizon: int) -> "ExogenousModel":
        kernel = np.asarray(kernel, dtype=float)
        return cls(states, np.repeat(kernel[None], max(horizon - 1, 0), axis=0), w0)

    @classmethod
    def from_ar1(cls, states, means, phi, sigma, w0: int) -> "ExogenousModel":
        """AR(1) about period means: ``W_{t+1} = mu_{t+1} + phi_t (W_t - mu_t) + noise_{t+1}``.

        ``means`` has length T, ``phi`` and ``sigma`` length T - 1.
        """
        states = np.asarray(states, dtype=np.int64)
        means = np.asarray(means, dtype=float)
        ks = [ar1_kernel(states, means[t], means[t + 1], phi[t], sigma[t])
              for t in range(len(means) - 1)]
        n = states.size
        return cls(states, np.array(ks).reshape(-1, n, n), w0)


@dataclass(frozen=True, eq=False)
class DemandModel:
    """Total demand given prediction ``w`` is discretize(w, sd[t], 0..m*A_max)."""

    sd: np.ndarray

    def __post_init__(self):
        sd = _frozen(self.sd, float)
        if sd.ndim != 1 or np.any(sd <= 0):
            raise ValueError("demand standard deviations must be positive")
        object.__setattr__(self, "sd", sd)


@dataclass(frozen=True, eq=False)
class PatientBatch:
    """One period's attribute-request realization."""

    xi: np.ndarray
    req: np.ndarray

    def __post_init__(self):
        xi = _frozen(self.xi, np.int64)
        req = _frozen(self.req, np.int64)
        if xi.shape != req.shape or xi.ndim != 1:
            raise ValueError("xi and req must be vectors of equal length")
        if np.any(req < 0):
            raise ValueError("requests must be nonnegative")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "req", req)

    @property
    def m(self) -> int:
        return self.req.size

    @property
    def total(self) -> int:
        return int(self.req.sum())


@dataclass(frozen=True)
class State:
    r: int
    w: int


@dataclass(frozen=True, eq=False)
class Instance:
    """Full MDP specification.

    ``patterns_xi`` / ``patterns_req`` have shape ``(T, m*A_max + 1, P, m)``:
    for each period and total demand level, ``P`` equiprobable batches whose
    requests sum to that level.
    """

    T: int
    R_max: int
    m: int
    A_max: int
    c: float
    h: float
    b: float
    exo: ExogenousModel
    demand: DemandModel
    utility: UtilityTable
    classes: np.ndarray
    patterns_xi: np.ndarray
    patterns_req: np.ndarray
    name: str = "instance"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not 0 <= self.h < self.c:
            raise ValueError(f"need 0 <= h < c, got h={self.h}, c={self.c}")
        if self.b < 0:
            raise ValueError("disposal cost must be nonnegative")
        if self.R_max < self.A_max:
            raise ValueError("R_max must be at least A_max")
        probs = _frozen(self.classes, float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("class probabilities must be nonnegative and sum to 1")
        if probs.size != self.utility.n_classes or self.utility.a_max != self.A_max:
            raise ValueError("utility table does not match classes / A_max")
        self.utility.validate(self.c)
        if self.exo.kernels.shape[0] != self.T - 1:
            raise ValueError("need exactly T - 1 exogenous kernels")
        if self.demand.sd.size != self.T:
            raise ValueError("need one demand standard deviation per period")
        xi = _frozen(self.patterns_xi, np.int64)
        req = _frozen(self.patterns_req, np.int64)
        dmax = self.m * self.A_max
        if xi.shape != req.shape or xi.ndim != 4 or xi.shape[:2] != (self.T, dmax + 1) \
                or xi.shape[3] != self.m:
            raise ValueError(f"patterns must have shape (T, {dmax + 1}, P, m)")
        if np.any(req < 0) or np.any(req > self.A_max):
            raise ValueError("pattern requests out of range")
        if np.any(req.sum(axis=3) != np.arange(dmax + 1)[None, :, None]):
            raise ValueError("pattern requests must sum to their demand level")
        if np.any(xi < 0) or np.any(xi >= probs.size):
            raise ValueError("pattern classes out of range")
        for name, val in (("patterns_xi", xi), ("patterns_req", req), ("classes", probs)):
            object.__setattr__(self, name, val)
        for name in ("T", "R_max", "m", "A_max"):
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ("c", "h", "b"):
            object.__setattr__(self, name, float(getattr(self, name)))

    # -- dimensions -------------------------------------------------------
    @property
    def d_max(self) -> int:
        return self.m * self.A_max

    @property
    def n_patterns(self) -> int:
        return self.patterns_req.shape[2]

    @property
    def n_w(self) -> int:
        return self.exo.n

    @property
    def zcap(self) -> int:
        """Largest inventory level that can matter to a single period's dispensing."""
        return min(self.R_max, self.d_max)

    def batch(self, t: int, d: int, p: int) -> PatientBatch:
        return PatientBatch(self.patterns_xi[t, d, p], self.patterns_req[t, d, p])

    # -- derived tables (computed once, read-only) ------------------------
    @cached_property
    def demand_pmf(self) -> np.ndarray:
        """``pmf[t, w, d]`` of the total demand."""
        support = range(self.d_max + 1)
        out = np.array([[discretize(float(lvl), self.demand.sd[t], support)
                         for lvl in self.exo.states] for t in range(self.T)])
        out.setflags(write=False)
        return out

    @cached_property
    def demand_cdf(self) -> np.ndarray:
        out = np.cumsum(self.demand_pmf, axis=2)
        out[..., -1] = 1.0
        out.setflags(write=False)
        return out

    @cached_property
    def kernel_cdf(self) -> np.ndarray:
        out = np.cumsum(self.exo.kernels, axis=2)
        if out.size:
            out[..., -1] = 1.0
        out.setflags(write=False)
        return out

    @cached_property
    def _unit_order(self):
        """Greedy dispensing order of every stored batch.

        Returns (values, classes) of shape (T, D+1, P, m*A_max) with units
        listed in allocation order (largest marginal first, ties to the lowest
        patient index); missing units carry -inf.
        """
        du = np.where(np.isnan(self.utility.marginals), -np.inf, self.utility.marginals)
        vals = du[self.patterns_xi, self.patterns_req]          # (..., m, A_max)
        cls = np.broadcast_to(self.patterns_xi[..., None], vals.shape)
        shape = vals.shape[:-2] + (self.m * self.A_max,)
        vals = vals.reshape(shape)
        cls = cls.reshape(shape)
        order = np.argsort(-vals, axis=-1, kind="stable")
        return np.take_along_axis(vals, order, -1), np.take_along_axis(cls, order, -1)

    @cached_property
    def cum_utility(self) -> np.ndarray:
        """``U[t, d, p, k]`` = optimal dispensing utility with ``k`` units, k <= zcap."""
        vals, _ = self._unit_order
        vals = np.where(np.isfinite(vals), vals, 0.0)[..., : self.zcap]
        out = np.zeros(vals.shape[:-1] + (self.zcap + 1,))
        np.cumsum(vals, axis=-1, out=out[..., 1:])
        out.setflags(write=False)
        return out

    @cached_property
    def cum_class_units(self) -> np.ndarray:
        """``N[t, d, p, k, j]``: units of class ``j`` among the first ``k`` dispensed."""
        vals, cls = self._unit_order
        cls = cls[..., : self.zcap]
        live = np.isfinite(vals[..., : self.zcap])
        onehot = (cls[..., None] == np.arange(self.utility.n_classes)) & live[..., None]
        out = np.zeros(cls.shape[:-1] + (self.zcap + 1, self.utility.n_classes), dtype=np.int64)
        np.cumsum(onehot, axis=-2, out=out[..., 1:, :])
        out.setflags(write=False)
        return out

    @cached_property
    def mean_marginal(self) -> np.ndarray:
        """``M[t, d, z]`` = E[U(z) - U(z-1) | D = d] over stored batches, z = 1..R_max.

        Column 0 is unused and set to zero.
        """
        cu = self.cum_utility.mean(axis=2)                          # (T, D+1, zcap+1)
        z = np.arange(self.R_max + 1)
        d = np.arange(self.d_max + 1)
        hi = np.minimum(z[None, :], d[:, None])
        lo = np.minimum(np.maximum(z - 1, 0)[None, :], d[:, None])
        out = np.take_along_axis(cu, np.broadcast_to(hi, cu.shape[:1] + hi.shape), 2) \
            - np.take_along_axis(cu, np.broadcast_to(lo, cu.shape[:1] + lo.shape), 2)
        out[:, :, 0] = 0.0
        out.setflags(write=False)
        return out

    def dispense_value(self, t, d, p, z):
        """Vectorized U(z, batch) and units dispensed for stored batches."""
        sold = np.minimum(z, d)
        return self.cum_utility[t, d, p, sold], sold

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        du = self.utility.marginals
        util = {f"{k}/{a}": [float(x) for x in du[k, a, :a]]
                for k in range(du.shape[0]) for a in range(du.shape[1])}
        patterns = {}
        for t in range(self.T):
            for d in range(self.d_max + 1):
                patterns[f"{t}/{d}"] = [
                    {"xi": self.patterns_xi[t, d, p].tolist(),
                     "req": self.patterns_req[t, d, p].tolist()}
                    for p in range(self.n_patterns)]
        return {
            "schema": "podadp.instance",
            "version": SCHEMA_VERSION,
            "name": self.name,
            "T": self.T,
            "R_max": self.R_max,
            "m": self.m,
            "A_max": self.A_max,
            "c": self.c,
            "h": self.h,
            "b": self.b,
            "classes": [float(x) for x in self.classes],
            "exo": {
                "states": self.exo.states.tolist(),
                "w0": self.exo.w0,
                "kernels": self.exo.kernels.tolist(),
            },
            "demand": {"sd": self.demand.sd.tolist()},
            "utility": util,
            "patterns": patterns,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict) -> "Instance":
        if doc.get("schema") != "podadp.instance":
            raise ValueError("not an instance document")
        if doc.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported instance version {doc.get('version')}")
        T, a_max, m = doc["T"], doc["A_max"], doc["m"]
        n_cls = len(doc["classes"])
        du = np.full((n_cls, a_max + 1, a_max), np.nan)
        for key, vals in doc["utility"].items():
            k, a = (int(s) for s in key.split("/"))
            du[k, a, :a] = vals
        n_pat = len(doc["patterns"]["0/0"])
        xi = np.zeros((T, m * a_max + 1, n_pat, m), dtype=np.int64)
        req = np.zeros_like(xi)
        for key, pats in doc["patterns"].items():
            t, d = (int(s) for s in key.split("/"))
            for p, pat in enumerate(pats):
                xi[t, d, p] = pat["xi"]
                req[t, d, p] = pat["req"]
        n = len(doc["exo"]["states"])
        exo = ExogenousModel(doc["exo"]["states"],
                             np.array(doc["exo"]["kernels"], dtype=float).reshape(-1, n, n),
                             doc["exo"]["w0"])
        return cls(T=T, R_max=doc["R_max"], m=m, A_max=a_max, c=doc["c"], h=doc["h"],
                   b=doc["b"], exo=exo, demand=DemandModel(doc["demand"]["sd"]),
                   utility=UtilityTable(du), classes=doc["classes"], patterns_xi=xi,
                   patterns_req=req, name=doc.get("name", "instance"),
                   meta=doc.get("meta", {}))

    @classmethod
    def load(cls, path) -> "Instance":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def make_patterns(T: int, m: int, a_max: int, classes, n_patterns: int,
                  rng: np.random.Generator):
    """Pre-generate ``n_patterns`` equiprobable batches per (t, demand level)."""
    from .stochastic import decompose_total

    dmax = m * a_max
    xi = np.zeros((T, dmax + 1, n_patterns, m), dtype=np.int64)
    req = np.zeros_like(xi)
    probs = np.asarray(classes, dtype=float)
    for t in range(T):
        for d in range(dmax + 1):
            for p in range(n_patterns):
                req[t, d, p] = decompose_total(d, m, a_max, rng)
                xi[t, d, p] = rng.choice(probs.size, size=m, p=probs)
    return xi, req
