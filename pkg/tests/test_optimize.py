import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spglmm.optimize import OptimProblem, golden_section_minimize, maximize


def test_quadratic_1d():
    res = maximize(OptimProblem(lambda x: -(x[0] - 3) ** 2, [0.0]))
    assert res.x[0] == pytest.approx(3, abs=1e-6)
    assert res.converged


def test_quadratic_2d():
    res = maximize(OptimProblem(lambda x: -(x[0] - 1) ** 2 - (x[1] + 2) ** 2, [0.0, 0.0]))
    np.testing.assert_allclose(res.x, [1, -2], atol=1e-6)


def test_poisson_intercept_closed_form():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(60)
    beta = 0.4
    y = rng.poisson(np.exp(1.2 + beta * x))
    # with exp-mean data the intercept MLE solves sum(exp(c + x beta)) = sum(y)
    expect = math.log(y.sum() / np.exp(beta * x).sum())

    def f(c):
        eta = c[0] + beta * x
        return float(np.sum(y * eta - np.exp(eta)))

    res = maximize(OptimProblem(f, [0.0]))
    assert res.x[0] == pytest.approx(expect, abs=1e-6)


def test_poisson_intercept_only_matches_log_mean():
    y = np.array([0, 2, 3, 1, 5, 4], dtype=float)
    res = maximize(OptimProblem(lambda c: float(np.sum(y * c[0] - math.exp(c[0]))), [0.0]))
    assert res.x[0] == pytest.approx(math.log(y.mean()), abs=1e-6)


def test_bounds_respected():
    res = maximize(OptimProblem(lambda x: -(x[0] - 10) ** 2, [0.0], bounds=(-2.0, 2.0)))
    assert -2.0 <= res.x[0] <= 2.0
    assert res.x[0] == pytest.approx(2.0, abs=1e-6)
    assert res.at_bound


def test_nonfinite_start():
    with pytest.raises(ValueError):
        maximize(OptimProblem(lambda x: math.nan, [0.0]))


def test_start_outside_bounds():
    with pytest.raises(ValueError):
        OptimProblem(lambda x: 0.0, [5.0], bounds=(-1.0, 1.0))


def test_budget_exhaustion_reports_best_so_far():
    f = lambda x: -float(np.sum((x - 1) ** 2))  # noqa: E731
    res = maximize(OptimProblem(f, np.zeros(3), maxeval=20))
    assert not res.converged
    assert res.value >= f(np.zeros(3))


def test_flat_objective_returns_start():
    res = maximize(OptimProblem(lambda x: 1.0, [0.7]))
    assert res.x[0] == 0.7


def test_zero_dimensional():
    res = maximize(OptimProblem(lambda x: 2.0, np.zeros(0)))
    assert res.x.size == 0 and res.value == 2.0


def test_deterministic():
    f = lambda x: -float((x[0] - 0.3) ** 4 + (x[1] + x[0]) ** 2)  # noqa: E731
    a = maximize(OptimProblem(f, [1.0, 1.0]))
    b = maximize(OptimProblem(f, [1.0, 1.0]))
    assert a.x.tobytes() == b.x.tobytes() and a.evals == b.evals


@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=4),
    st.lists(st.floats(0.2, 5), min_size=4, max_size=4),
    st.integers(0, 10_000),
)
def test_concave_quadratics(center, diag, seed):
    D = len(center)
    rng = np.random.default_rng(seed)
    Qm, _ = np.linalg.qr(rng.standard_normal((D, D)))
    A = Qm @ np.diag(diag[:D]) @ Qm.T
    c = np.array(center)

    def f(x):
        d = x - c
        return -float(d @ A @ d)

    start = np.zeros(D)
    res = maximize(OptimProblem(f, start))
    assert res.value >= f(start)
    np.testing.assert_allclose(res.x, c, atol=1e-6)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_never_worse_than_start(a, s):
    f = lambda x: math.sin(3 * x[0]) - 0.1 * (x[0] - a) ** 2  # noqa: E731
    res = maximize(OptimProblem(f, [s]))
    assert res.value >= f(np.array([s]))


def test_golden_section():
    x, fx = golden_section_minimize(lambda s: (s - 0.3) ** 2, 0.0, 1.0)
    assert x == pytest.approx(0.3, abs=1e-8)
    assert fx == pytest.approx(0.0, abs=1e-12)
