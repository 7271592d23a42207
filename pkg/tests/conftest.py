from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from spglmm.family import HierarchicalDataset  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# filled by test_acceptance; printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(':'))):
            terminalreporter.write_line(line)


def make_dataset(family: str, sizes, intercepts, slope=0.3, seed=0) -> HierarchicalDataset:
    """Random-intercept data with one fixed slope; intercepts given per group."""
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(len(sizes)), sizes)
    x = rng.standard_normal(groups.size)
    eta = slope * x + np.asarray(intercepts, dtype=float)[groups]
    if family == "poisson":
        y = rng.poisson(np.exp(eta))
    else:
        y = (rng.random(groups.size) < 1 / (1 + np.exp(-eta))).astype(float)
    return HierarchicalDataset.from_arrays(y, x[:, None], np.ones((groups.size, 1)), groups, ["x1"], ["intercept"])


@pytest.fixture
def poisson_small():
    return make_dataset("poisson", [40, 40, 40, 40, 40, 40], [2.0, 2.0, 0.0, 0.0, 0.0, -1.0], seed=11)
