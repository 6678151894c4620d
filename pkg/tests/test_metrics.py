import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from litkg.metrics import ConfusionCounts, confusion, evaluate_predictions, metrics


def test_all_correct():
    c = confusion([0.9, 0.1, 0.8], [1, 0, 1])
    assert c.fp == 0 and c.fn == 0
    assert metrics(ConfusionCounts(5, 5, 0, 0)).f1 == 1.0


def test_threshold_tie_counts_positive():
    c = confusion([0.5] * 4, [1, 0, 1, 0])
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 2, 0, 0)


def test_eight_pair_fixture_tally():
    probs = [0.9, 0.7, 0.55, 0.6, 0.2, 0.1, 0.4, 0.3]
    labels = [1, 1, 1, 0, 1, 0, 1, 0]
    # hand tally: >= 0.5 at indices 0..3; positives at 0,1,2,4,6
    assert confusion(probs, labels) == ConfusionCounts(tp=3, tn=2, fp=1, fn=2)


def test_metric_formulas():
    r = metrics(ConfusionCounts(tp=3, tn=2, fp=1, fn=2))
    assert r.acc == pytest.approx(0.625, abs=1e-12)
    assert r.precision == pytest.approx(0.75, abs=1e-12)
    assert r.recall == pytest.approx(0.6, abs=1e-12)
    assert r.f1 == pytest.approx(0.6667, abs=1e-4)
    assert r.f1 == pytest.approx(2 / 3, abs=1e-12)
    assert r.flags == []


def test_undefined_precision_flagged():
    r = metrics(ConfusionCounts(tp=0, tn=4, fp=0, fn=2))
    assert r.precision == 0.0 and "precision_undefined" in r.flags
    assert r.f1 == 0.0


def test_report_json_shape():
    d = evaluate_predictions([0.9, 0.2], [1, 0]).to_dict()
    assert set(d) == {"acc", "precision", "recall", "f1", "counts", "flags"}
    json.dumps(d)


def test_length_mismatch():
    with pytest.raises(ValueError):
        confusion([0.1, 0.2], [1])


pairs = st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=60)


@settings(max_examples=100)
@given(pairs)
def test_f1_is_between_precision_and_recall(data):
    probs, labels = zip(*data)
    r = evaluate_predictions(probs, labels)
    if not r.flags:
        assert min(r.precision, r.recall) - 1e-12 <= r.f1 <= max(r.precision, r.recall) + 1e-12


@settings(max_examples=100)
@given(pairs, st.randoms(use_true_random=False))
def test_metrics_permutation_invariant(data, rnd):
    shuffled = list(data)
    rnd.shuffle(shuffled)
    a = evaluate_predictions(*zip(*data)).to_dict()
    b = evaluate_predictions(*zip(*shuffled)).to_dict()
    assert a == b
