"""Discretized normal laws and the AR(1) exogenous kernel."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr


def normal_cdf(x, mean: float = 0.0, sd: float = 1.0):
    """Normal CDF via ``scipy.special.ndtr`` (erf based, ~1e-16 absolute error)."""
    return ndtr((np.asarray(x, dtype=float) - mean) / sd)


def discretize(mean: float, sd: float, support) -> np.ndarray:
    """Probability mass of a normal variable discretized onto an integer range.

    ``P(X_disc = x) = P(X <= x) - P(X <= x - 1)``; the mass below the first
    support point and above the last one is folded into the endpoints.

    Parameters
    ----------
    mean, sd : float
        Parameters of the continuous normal variable. ``sd`` must be positive.
    support : sequence of int
        Consecutive integers, e.g. ``range(0, 21)``.
    """
    if not sd > 0:
        raise ValueError(f"standard deviation must be positive, got {sd}")
    pts = np.asarray(support, dtype=np.int64)
    if pts.size == 0:
        raise ValueError("support must be nonempty")
    if pts.size > 1 and np.any(np.diff(pts) != 1):
        raise ValueError("support must be a range of consecutive integers")
    upper = normal_cdf(pts.astype(float), mean, sd)
    upper[-1] = 1.0
    lower = np.empty_like(upper)
    lower[0] = 0.0
    lower[1:] = upper[:-1]
    pmf = np.clip(upper - lower, 0.0, None)
    return pmf / pmf.sum()


def ar1_kernel(levels, mean_from: float, mean_to: float, phi: float, sd: float) -> np.ndarray:
    """Transition matrix of ``W' = mean_to + phi * (W - mean_from) + noise``.

    The noise is N(0, sd); the next state is discretized onto ``levels`` with
    the same rule as :func:`discretize`.
    """
    levels = np.asarray(levels, dtype=np.int64)
    rows = [discretize(mean_to + phi * (w - mean_from), sd, levels) for w in levels]
    return np.vstack(rows)


def inverse_cdf_sample(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF sampling.

    ``cdf_rows`` has shape (n, k) (or (k,) shared by every draw) and ``u`` has
    shape (n,). Returns the smallest index ``j`` with ``cdf[j] > u``.
    """
    cdf_rows = np.asarray(cdf_rows)
    u = np.asarray(u)
    if cdf_rows.ndim == 1:
        idx = np.searchsorted(cdf_rows, u, side="right")
    else:
        idx = (cdf_rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[-1] - 1)


def decompose_total(total: int, m: int, a_max: int, rng: np.random.Generator) -> np.ndarray:
    """Split a total request count into ``m`` individual requests in ``0..a_max``.

    Patients draw sequentially, uniformly over the values that still leave the
    remainder reachable by the patients after them; the result is shuffled so
    no patient index is systematically forced.
    """
    if not 0 <= total <= m * a_max:
        raise ValueError(f"total {total} not in [0, {m * a_max}]")
    req = np.zeros(m, dtype=np.int64)
    remaining = total
    for i in range(m):
        after = m - i - 1
        lo = max(0, remaining - a_max * after)
        hi = min(a_max, remaining)
        req[i] = rng.integers(lo, hi + 1)
        remaining -= req[i]
    return rng.permutation(req)
