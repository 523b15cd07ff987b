import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_oracle import oracle_scores, random_corpus

from dualsource.metrics import (
    StreamingMetrics,
    evaluate,
    mean_f1,
    mean_multilabel_f1,
    normalize_value,
    per_label_f1,
    set_f1,
    subset_recall,
)


def test_set_f1_examples():
    assert set_f1(["a"], ["a"]) == 1.0
    assert set_f1([], ["a"]) == 0.0
    assert set_f1(["a", "b"], ["a", "c"]) == 0.5
    assert set_f1([], []) == 1.0


def test_mean_f1_examples():
    assert mean_f1([(["a"], ["a"]), ([], ["a"])]) == 0.5
    assert mean_f1([(["a", "b"], ["a", "c"])]) == 0.5
    pairs = [(["a"], ["a"]), (["b"], ["b"]), (["a", "b"], ["a", "c"]), (["q"], ["a"])]
    assert mean_f1(pairs) == 0.625
    with pytest.raises(ValueError):
        mean_f1([])


def test_mean_multilabel_example():
    golds = {"1": {"p": ["a"], "q": ["b"]}, "2": {"p": ["c"]}}
    preds = {"1": {"p": ["a"], "q": ["z"]}, "2": {"p": ["c"]}}
    assert mean_multilabel_f1(preds, golds) == 0.75


def test_per_label_examples():
    golds = {"1": {"p": ["a"]}, "2": {"p": ["a", "b"]}}
    preds = {"1": {"p": ["a"]}, "2": {"p": ["a", "c"]}}
    assert per_label_f1(preds, golds, "p") == 0.75
    assert per_label_f1({}, golds, "p") == 0.0
    assert per_label_f1({"2": preds["2"]}, {"2": golds["2"]}, "p") == set_f1(["a", "c"], ["a", "b"])
    with pytest.raises(KeyError):
        per_label_f1(preds, golds, "missing")


def test_subset_recall_examples():
    golds = {"1": {"p": ["a", "b", "c", "d"]}}
    tags = {("1", "p", v): "EM" for v in "abcd"}
    assert subset_recall({"1": {"p": ["a", "b", "c"]}}, golds, tags, "EM") == 0.75
    assert subset_recall({"1": {"p": list("abcd")}}, golds, tags, "EM") == 1.0
    assert subset_recall({}, golds, tags, "EM") == 0.0
    with pytest.raises(ValueError):
        subset_recall({}, golds, tags, "IN")


def test_rejections():
    golds = {"1": {"p": ["a"]}}
    with pytest.raises(KeyError):
        evaluate({"2": {"p": ["a"]}}, golds)
    with pytest.raises(KeyError):
        evaluate({"1": {"q": ["a"]}}, golds)
    acc = StreamingMetrics()
    acc.add("1", {}, golds["1"])
    with pytest.raises(ValueError):
        acc.add("1", {}, golds["1"])


def test_perfect_and_empty_predictions():
    rng = random.Random(5)
    _, golds = random_corpus(rng, 5)
    tags = {(a, k, v): ("EM" if i % 2 else "IN") for a, g in golds.items()
            for k, vals in g.items() for i, v in enumerate(vals)}
    perfect = evaluate(golds, golds, tags)
    assert perfect.mean_f1 == perfect.mean_multilabel_f1 == 1.0
    assert all(v == 1.0 for v in perfect.per_label.values())
    empty = evaluate({}, golds, tags)
    assert empty.mean_f1 == empty.mean_multilabel_f1 == 0.0
    assert empty.em_recall in (0.0, None) and empty.in_recall in (0.0, None)


def test_normalization():
    assert normalize_value("  New   York. ") == "new york"
    assert set_f1(["Paris"], ["paris!"]) == 1.0


def test_oracle_agreement_small_sample():
    rng = random.Random(0)
    for _ in range(200):
        preds, golds = random_corpus(rng)
        mf1, mm, per = oracle_scores(preds, golds)
        rep = evaluate(preds, golds)
        assert abs(rep.mean_f1 - mf1) <= 1e-12
        assert abs(rep.mean_multilabel_f1 - mm) <= 1e-12
        assert set(rep.per_label) == set(per)
        for k in per:
            assert abs(rep.per_label[k] - per[k]) <= 1e-12


def test_streaming_matches_batch_functions():
    rng = random.Random(1)
    for _ in range(100):
        preds, golds = random_corpus(rng)
        rep = evaluate(preds, golds)
        assert rep.mean_multilabel_f1 == pytest.approx(mean_multilabel_f1(preds, golds), abs=1e-15)
        pairs = [(preds.get(a, {}).get(k, ()), v) for a, g in golds.items() for k, v in g.items()]
        assert rep.mean_f1 == pytest.approx(mean_f1(pairs), abs=1e-15)


def test_degenerate_equivalence():
    rng = random.Random(2)
    for _ in range(200):
        preds, golds = random_corpus(rng, max_keys=1)
        rep = evaluate(preds, golds)
        assert rep.mean_multilabel_f1 == rep.mean_f1


values = st.lists(st.sampled_from(["a", "b", "c", "D", "e "]), max_size=4)


@settings(max_examples=200, deadline=None)
@given(values, values)
def test_set_f1_symmetric_and_bounded(p, g):
    s = set_f1(p, g)
    assert 0.0 <= s <= 1.0
    assert s == set_f1(g, p)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_order_invariance(seed):
    rng = random.Random(seed)
    preds, golds = random_corpus(rng)
    base = evaluate(preds, golds)
    for _ in range(5):
        shuffled_golds = dict(rng.sample(list(golds.items()), len(golds)))
        shuffled_golds = {a: dict(rng.sample(list(g.items()), len(g))) for a, g in shuffled_golds.items()}
        shuffled_preds = {a: {k: rng.sample(v, len(v)) for k, v in p.items()} for a, p in preds.items()}
        rep = evaluate(shuffled_preds, shuffled_golds)
        assert rep.mean_f1 == base.mean_f1
        assert rep.mean_multilabel_f1 == base.mean_multilabel_f1
        assert rep.per_label == base.per_label


def test_report_serialization():
    golds = {"1": {"p": ["a"]}}
    rep = evaluate({"1": {"p": ["a"]}}, golds)
    assert '"mean_multilabel_f1": 1.0' in rep.to_json()
    assert "Mean-MultiLabel-F1" in rep.to_table()
