"""Lower-level dispensing problem and the single-period dynamics."""

from __future__ import annotations

import numpy as np

from .model import Instance, PatientBatch, UtilityTable


def solve_dispensing(z: int, batch: PatientBatch, util: UtilityTable,
                     unit_cost: float = 0.0) -> tuple[np.ndarray, float]:
    """Allocate ``z`` units to maximize total patient utility.

    Units go one at a time to the patient with the largest current marginal
    utility (ties to the lowest patient index), which is optimal for separable
    concave objectives.

    Returns the allocation vector and the attained utility.
    """
    if z < 0:
        raise ValueError(f"inventory must be nonnegative, got {z}")
    util.validate(unit_cost)
    if np.any(batch.req > util.a_max):
        raise ValueError("request exceeds A_max of the utility table")
    # patient-major unit list; stable sort keeps the tie-break by patient index
    owners, values = [], []
    for i, (k, a) in enumerate(zip(batch.xi, batch.req)):
        du = util.marginal(int(k), int(a))
        owners.extend([i] * du.size)
        values.extend(du.tolist())
    values = np.asarray(values, dtype=float)
    order = np.argsort(-values, kind="stable")[: min(z, values.size)]
    y = np.bincount(np.asarray(owners, dtype=np.int64)[order], minlength=batch.m)
    return y, float(values[order].sum())


def transition(z: int, batch: PatientBatch) -> int:
    """Next pre-decision inventory: ``z - min(z, sum(A))``."""
    if z < 0:
        raise ValueError(f"inventory must be nonnegative, got {z}")
    return int(z - min(z, batch.total))


def stage_reward(z: int, batch: PatientBatch, inst: Instance) -> float:
    """``U(z, xi, A) - c * dispensed``, the per-period term of the reformulated objective."""
    y, u = solve_dispensing(z, batch, inst.utility, inst.c)
    return u - inst.c * float(y.sum())
