import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shapegd.metrics import compute_roc, mann_whitney_auc, summarize

scores = st.lists(st.integers(-20, 20).map(float), min_size=1, max_size=40)


def test_hand_counted_ties():
    assert compute_roc([2, 3], [1, 2]).auc == 0.875
    assert mann_whitney_auc([2, 3], [1, 2]) == 0.875


def test_separated_and_identical():
    assert compute_roc([5, 6, 7], [1, 2]).auc == 1.0
    assert compute_roc([1, 2], [5, 6, 7]).auc == 0.0
    rng = np.random.default_rng(0)
    assert abs(compute_roc(rng.normal(size=2000), rng.normal(size=2000)).auc - 0.5) < 0.03


@given(scores, scores)
def test_trapezoid_equals_rank_statistic(pos, neg):
    roc = compute_roc(pos, neg)
    assert abs(roc.auc - mann_whitney_auc(pos, neg)) <= 1e-9
    assert 0 <= roc.auc <= 1
    assert np.all(np.diff(roc.fp_rates) >= 0) and np.all(np.diff(roc.tp_rates) >= 0)
    assert roc.points[0] == (0.0, 0.0) and roc.points[-1] == (1.0, 1.0)


def test_empty_sets_rejected():
    with pytest.raises(ValueError):
        compute_roc([], [1.0])
    with pytest.raises(ValueError):
        compute_roc([np.nan], [1.0])


def test_summary_reports_censored_alongside():
    s = summarize([10, 20, 30], censored=2)
    assert (s.count, s.censored, s.median) == (3, 2, 20.0)
    assert s.low == pytest.approx(10.2) and s.high == pytest.approx(29.8)
    empty = summarize([], censored=5)
    assert empty.count == 0 and empty.censored == 5 and np.isnan(empty.median)
