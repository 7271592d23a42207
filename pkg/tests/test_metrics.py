import math
import warnings

import numpy as np
import pytest
from conftest import make_dataset
from hypothesis import given
from hypothesis import strategies as st

from spglmm.em import FitConfig
from spglmm.metrics import confusion_metrics, elbow_scan, entropy, gof_counts, roc_auc, round_counts


def mann_whitney_auc(y, s):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestCounts:
    def test_single_miss(self):
        mse, mse_log, chi2 = gof_counts([0], [1])
        assert mse == 1.0
        assert mse_log == pytest.approx(math.log(2) ** 2)
        assert chi2 == 0.5

    def test_perfect(self):
        assert gof_counts([3, 0, 7], [3, 0, 7]) == (0.0, 0.0, 0.0)

    def test_rounding(self):
        assert round_counts([0.4, 1.5, 2.5, 2.6]).tolist() == [0.0, 2.0, 2.0, 3.0]

    def test_errors(self):
        with pytest.raises(ValueError):
            gof_counts([1, 2], [1])
        with pytest.raises(ValueError):
            gof_counts([-1], [1])

    @given(st.lists(st.integers(0, 50), min_size=1, max_size=30))
    def test_nonnegative_and_zero_on_identity(self, y):
        mse, mse_log, chi2 = gof_counts(y, np.array(y) + 1)
        assert mse == 1.0 and mse_log > 0 and chi2 > 0
        assert gof_counts(y, y) == (0.0, 0.0, 0.0)


class TestConfusion:
    def test_rates(self):
        sens, spec, acc = confusion_metrics([1, 1, 0, 0, 0], [1, 0, 0, 0, 1])
        assert (sens, spec, acc) == (0.5, pytest.approx(2 / 3), 0.6)

    def test_empty_class(self):
        sens, spec, acc = confusion_metrics([0, 0], [0, 1])
        assert sens is None and spec == 0.5 and acc == 0.5

    def test_nonbinary(self):
        with pytest.raises(ValueError):
            confusion_metrics([0, 2], [0, 1])


class TestAuc:
    def test_perfect_and_reversed(self):
        y = np.array([0, 0, 1, 1])
        assert roc_auc(y, [0.1, 0.2, 0.8, 0.9])[0] == 1.0
        assert roc_auc(y, [0.9, 0.8, 0.2, 0.1])[0] == 0.0

    def test_constant_scores(self):
        assert roc_auc([0, 1, 0, 1], [0.5] * 4)[0] == 0.5

    def test_youden(self):
        _, thr = roc_auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8])
        assert thr in (0.35, 0.8)
        _, thr = roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
        assert thr == 0.8

    def test_single_class(self):
        with pytest.raises(ValueError):
            roc_auc([1, 1], [0.2, 0.3])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            roc_auc([0, 1], [0.2, 1.3])

    @given(st.integers(0, 10_000))
    def test_matches_mann_whitney(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = np.round(rng.random(n), 1)  # induce ties
        assert roc_auc(y, s)[0] == pytest.approx(mann_whitney_auc(y, s), abs=1e-12)

    @given(st.integers(0, 10_000))
    def test_monotone_transform_invariant(self, seed):
        rng = np.random.default_rng(seed)
        y = np.r_[0, 1, rng.integers(0, 2, 20)]
        s = rng.random(22)
        assert roc_auc(y, s ** 3)[0] == pytest.approx(roc_auc(y, s)[0], abs=1e-12)


class TestEntropy:
    def test_example_row(self):
        E, mean = entropy([[0.9, 0.1]])
        assert E[0] == pytest.approx(0.3251, abs=1e-4)
        assert mean == E[0]

    def test_one_hot_zero(self):
        assert entropy(np.eye(3))[1] == 0.0

    def test_uniform(self):
        assert entropy(np.full((5, 4), 0.25))[1] == pytest.approx(math.log(4))

    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_bounds(self, seed, M):
        W = np.random.default_rng(seed).dirichlet(np.ones(M), size=4)
        E, _ = entropy(W)
        assert np.all(E >= -1e-12) and np.all(E <= math.log(M) + 1e-12)


@pytest.fixture(scope="module")
def data():
    return make_dataset("poisson", [60] * 6, [2.0, 2.0, 0.5, 0.5, -1.0, -1.0], seed=11)


class TestElbow:
    def test_single_point(self, data):
        pts = elbow_scan(data, FitConfig(family="poisson"), [0.5])
        assert len(pts) == 1 and pts[0].t == 0.5 and pts[0].m_hat == 3 and pts[0].error is None

    def test_cluster_count_nonincreasing(self, data):
        pts = elbow_scan(data, FitConfig(family="poisson"), [0.1, 0.5, 1.0, 2.0, 4.0])
        ms = [p.m_hat for p in pts]
        assert all(b <= a for a, b in zip(ms, ms[1:]))
        assert ms[-1] == 1 and pts[-1].entropy == 0.0

    def test_descending_grid_sorted(self, data):
        with pytest.warns(UserWarning):
            pts = elbow_scan(data, FitConfig(family="poisson"), [1.0, 0.5])
        assert [p.t for p in pts] == [0.5, 1.0]

    def test_empty_grid(self, data):
        with warnings.catch_warnings(), pytest.raises(ValueError):
            elbow_scan(data, FitConfig(family="poisson"), [])
