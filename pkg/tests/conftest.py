import itertools

import numpy as np
import pytest

from podadp.exact import backward_dp
from podadp.instances import BenchmarkSpec, gen_benchmark, gen_random
from podadp.model import PatientBatch, UtilityTable


def brute_force_dispense(z, batch, util):
    """Best total utility over every feasible allocation vector."""
    best = 0.0
    ranges = [range(int(a) + 1) for a in batch.req]
    for y in itertools.product(*ranges):
        if sum(y) > z:
            continue
        val = sum(util.utility(int(k), int(a), yi) for k, a, yi in zip(batch.xi, batch.req, y))
        best = max(best, val)
    return best


def random_utility(rng, n_classes, a_max, c):
    du = np.full((n_classes, a_max + 1, a_max), np.nan)
    for k in range(n_classes):
        for a in range(1, a_max + 1):
            # integer-valued marginals make ties common, which stresses tie-breaking
            du[k, a, :a] = np.sort(c + rng.integers(1, 6, size=a).astype(float))[::-1]
    return UtilityTable(du)


def random_batch(rng, m, a_max, n_classes):
    return PatientBatch(rng.integers(0, n_classes, m), rng.integers(0, a_max + 1, m))


@pytest.fixture(scope="session")
def small_bench():
    inst = gen_benchmark(BenchmarkSpec("Small", 0))
    return inst, backward_dp(inst)


@pytest.fixture
def tiny():
    """T=2, R_max=4, two prediction levels, two single-unit patients."""
    inst = gen_random(np.random.default_rng(3), T=2, R_max=4, n_w=2, m=2, A_max=1)
    return inst, backward_dp(inst)


# acceptance results, printed once more at the end of the session
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
