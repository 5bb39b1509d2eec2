import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgunlearn.evalkit import (EvalReport, MethodMetrics, accuracy, agreement, auc,
                               classify_unlearned, fingerprint, timing_report)


def brute_auc(pos, neg):
    return np.mean([1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg])


def test_auc_perfect():
    assert auc([0.9, 0.8], [0.1, 0.2]) == 1.0


def test_auc_identical_multisets():
    assert auc([0.3, 0.7, 0.7], [0.7, 0.3, 0.7]) == 0.5


def test_auc_enumerated_pairs():
    assert auc([0.7, 0.3], [0.5]) == 0.5


def test_auc_empty_side():
    with pytest.raises(ValueError):
        auc([], [0.1])


@given(st.lists(st.integers(0, 5), min_size=1, max_size=12),
       st.lists(st.integers(0, 5), min_size=1, max_size=12))
@settings(max_examples=100, deadline=None)
def test_auc_matches_pairwise_count(pos, neg):
    assert auc(pos, neg) == pytest.approx(brute_auc(pos, neg), abs=1e-12)


@given(st.lists(st.integers(-20, 20), min_size=1, max_size=10),
       st.lists(st.integers(-20, 20), min_size=1, max_size=10))
@settings(max_examples=60, deadline=None)
def test_auc_invariant_to_monotone_maps(pos, neg):
    # integers keep the map strictly increasing after rounding
    f = lambda x: np.tanh(np.asarray(x) / 10.0) + 3.0  # noqa: E731
    assert auc(pos, neg) == pytest.approx(auc(f(pos), f(neg)), abs=1e-12)


def test_accuracy_constant_model():
    assert accuracy(np.full(6, 0.99), [1, 1, 1, 0, 0, 0]) == 0.5


def test_accuracy_perfect():
    assert accuracy([0.9, 0.8, 0.2], [1, 1, 0]) == 1.0


def test_classifier_unlearned():
    ori = np.array([1, 1, 0, 0])
    assert classify_unlearned([1, 0, 0, 0], ori, [1, 0, 0, 0]) == "unlearned"


def test_classifier_tie_goes_to_original():
    y = np.array([1, 0, 1])
    assert classify_unlearned(y, y, y) == "original"


def test_classifier_by_agreement():
    ours = np.array([1, 1, 1, 1, 1, 0, 0, 0, 0, 0])
    ret = ours.copy()
    ret[:2] ^= 1  # agreement 0.8
    ori = ours.copy()
    ori[:4] ^= 1  # agreement 0.6
    assert agreement(ours, ret) == 0.8 and agreement(ours, ori) == 0.6
    assert classify_unlearned(ours, ori, ret) == "unlearned"


def test_classifier_length_mismatch():
    with pytest.raises(ValueError):
        classify_unlearned([1, 0], [1], [1, 0])


def test_timing_speedup():
    rep = timing_report([("retrain", 100.0), ("gradtrans", 20.0)])
    assert rep.speedup["gradtrans"] == 5.0


def test_timing_averages_repeats():
    rep = timing_report([("retrain", 90.0), ("retrain", 110.0), ("ft", 25.0), ("ft", 15.0)])
    assert rep.mean_seconds["retrain"] == 100.0 and rep.speedup["ft"] == 5.0


def test_timing_needs_retrain():
    with pytest.raises(ValueError):
        timing_report([("gradtrans", 1.0)])


def _report(seconds):
    rows = [MethodMetrics("retrain", 0.9, 0.2, 0.95, seconds=seconds),
            MethodMetrics("gradtrans", 0.88, 0.25, 0.94, -0.02, 0.05, -0.01, seconds / 3, 3.0,
                          "unlearned")]
    return EvalReport(rows, {"data": 0}, fingerprint({"a": 1}))


def test_report_is_deterministic_without_timings():
    a, b = _report(10.0), _report(12.5)
    assert a.to_json(timings=False) == b.to_json(timings=False)
    assert a.to_csv(timings=False) == b.to_csv(timings=False)
    assert "seconds" in a.to_json() and "seconds" not in a.to_json(timings=False)
    assert json.loads(a.to_json())["methods"][1]["verdict"] == "unlearned"


def test_plot_rows_one_per_method_and_metric():
    rows = _report(1.0).plot_csv("planted").splitlines()
    assert rows[0] == "method,dataset,metric,value"
    keys = [tuple(r.split(",")[:3]) for r in rows[1:]]
    assert len(keys) == len(set(keys))


def test_fingerprint_ignores_key_order():
    assert fingerprint({"a": 1, "b": 2}) == fingerprint({"b": 2, "a": 1})
