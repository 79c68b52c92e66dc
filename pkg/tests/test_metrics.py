"""Call-count and objective metrics over evaluation episodes."""
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surropt.metrics import amo_curve, compute_amo, compute_anc, metrics_report


def ep(trace):
    return SimpleNamespace(total_calls=len(trace),
                           objective_trace_at_calls=list(trace))


WORKED = [ep([20, 12, 7, 5, 3, 1]), ep([18, 6, 1]), ep([15, 5, 1])]


def test_anc_worked_example():
    assert compute_anc(WORKED) == pytest.approx(4.0)


def test_anc_trivial_cases():
    assert compute_anc([ep([3.0])]) == 1
    assert compute_anc([ep([1, 2]), ep([4, 5])]) == 2
    with pytest.raises(ValueError):
        compute_anc([])


def test_amo_worked_example():
    assert compute_amo(WORKED, 4) == pytest.approx(5.0)
    assert compute_amo(WORKED, 1) == pytest.approx((20 + 18 + 15) / 3)
    assert compute_amo(WORKED, 7) is None


def test_amo_k3_all_contribute():
    # first three values of each trace: mins are 7, 1, 1
    assert compute_amo(WORKED, 3) == pytest.approx((7 + 1 + 1) / 3)


def test_amo_requires_positive_k():
    with pytest.raises(ValueError):
        compute_amo(WORKED, 0)


def test_amo_curve_spans_to_max_and_counts_contributors():
    curve = amo_curve(WORKED)
    assert [row.k for row in curve] == [1, 2, 3, 4, 5, 6]
    assert curve[0].contributors == 3
    assert curve[3].contributors == 1
    assert curve[3].value == pytest.approx(5.0)
    assert curve[5].contributors == 1


def test_metrics_report_shapes():
    rep = metrics_report(WORKED)
    assert rep.anc == pytest.approx(4.0)
    assert rep.anc_std == pytest.approx(float(np.std([6, 3, 3])))
    assert len(rep.amo) == 6


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_amo_is_running_min_consistent(seed):
    rng = np.random.default_rng(seed)
    eps = []
    for _ in range(int(rng.integers(1, 6))):
        n = int(rng.integers(1, 9))
        eps.append(ep(list(rng.normal(0, 10, n))))
    max_k = max(e.total_calls for e in eps)
    last = None
    for k in range(1, max_k + 1):
        contributors = [e for e in eps if e.total_calls >= k]
        v = compute_amo(eps, k)
        expected = float(np.mean([min(e.objective_trace_at_calls[:k]) for e in contributors]))
        assert v == pytest.approx(expected)
        # once the contributor set is fixed, AMO is non-increasing in k
        if last is not None and len(contributors) == last[1]:
            assert v <= last[0] + 1e-12
        last = (v, len(contributors))
