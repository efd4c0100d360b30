import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsds.corpus import Sentence, build_vocab
from dsds.evaluation import (CurveRunError, UndefinedMetric, accuracy, better_of, learning_curve,
                             multi_seed, oov_split, pearson)
from dsds.lexicon import Lexicon

values = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=20)


def pearson_oracle(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    return cov / math.sqrt(vx * vy)


def test_accuracy_examples():
    assert accuracy([[1, 2], [3]], [[1, 2], [3]]) == 1.0
    assert accuracy([[1, 2, 3, 4]], [[1, 2, 3, 0]]) == 0.75
    assert accuracy([[1, None]], [[1, 5]]) == 1.0
    with pytest.raises(ValueError):
        accuracy([[1, 2]], [[1]])
    with pytest.raises(UndefinedMetric):
        accuracy([[None]], [[1]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 11), min_size=1, max_size=6), min_size=1, max_size=6))
def test_accuracy_of_gold_is_one(gold):
    assert accuracy(gold, gold) == 1.0


def test_oov_all_in_vocab_is_undefined():
    train = [Sentence(["a", "b"], [0, 1])]
    r = oov_split([["a", "b"]], [[0, 1]], [[0, 0]], build_vocab(train))
    assert r.n_oov == 0 and r.oov_accuracy is None
    assert r.oov_in_lex_accuracy is None and r.oov_not_in_lex_accuracy is None
    assert r.accuracy == 0.5


def test_oov_hand_corpus():
    vocab = build_vocab([Sentence(["the", "dog"], [5, 0])])
    lex = Lexicon("W", ["NOUN"], {"cat": frozenset({0})})
    toks = [["the", "cat", "zorp"]]
    r = oov_split(toks, [[5, 0, 1]], [[5, 0, 3]], vocab, [lex])
    assert (r.n_oov, r.n_oov_in_lex, r.n_oov_not_in_lex) == (2, 1, 1)
    assert r.oov_in_lex_accuracy == 1.0 and r.oov_not_in_lex_accuracy == 0.0
    assert r.oov_accuracy == 0.5 and r.lexicon_coverage == pytest.approx(1 / 3)
    rows = dict(r.rows())
    assert rows["oov_in_lex_accuracy"] == 1.0 and rows["tag_accuracy:1"] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcdef"), st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=30))
def test_oov_buckets_partition(items):
    vocab = build_vocab([Sentence(["a", "b"])])
    lex = Lexicon("L", ["p"], {"c": frozenset({0}), "d": frozenset({0})})
    toks, gold, pred = [[w for w, _, _ in items]], [[g for _, g, _ in items]], [[p for _, _, p in items]]
    r = oov_split(toks, gold, pred, vocab, [lex])
    assert r.n_oov_in_lex + r.n_oov_not_in_lex == r.n_oov == sum(w not in "ab" for w, _, _ in items)
    assert r.n_oov_in_lex_correct + r.n_oov_not_in_lex_correct == r.n_oov_correct


def test_pearson_examples():
    assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    with pytest.raises(UndefinedMetric):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


@pytest.mark.parametrize("seed", range(10))
def test_pearson_formula_oracle(seed):
    rng = np.random.default_rng(seed)
    xs, ys = rng.normal(size=25).tolist(), rng.normal(size=25).tolist()
    assert abs(pearson(xs, ys) - pearson_oracle(xs, ys)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10 ** 6), a=st.floats(0.1, 10), b=st.floats(-10, 10))
def test_pearson_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    xs, ys = rng.normal(size=10), rng.normal(size=10)
    assert pearson(a * xs + b, ys) == pytest.approx(pearson(xs, ys), abs=1e-9)


def test_multi_seed_examples():
    assert multi_seed([80, 82, 84]) == (82.0, 2.0)
    assert multi_seed([90]) == (90.0, 0.0)
    with pytest.raises(ValueError):
        multi_seed([])


@settings(max_examples=100, deadline=None)
@given(values)
def test_multi_seed_mean_bounded(xs):
    mean, std = multi_seed(xs)
    assert min(xs) - 1e-9 <= mean <= max(xs) + 1e-9 and std >= 0


def test_better_of_prefers_lower_std_on_equal_means():
    assert better_of([80, 82, 84], [81, 82, 83]) == 1
    assert better_of([85, 85], [80, 90]) == 0
    assert better_of([70], [71]) == 1


def _pool(n=40):
    return [Sentence([f"w{i}"], [0], coverage=i / n) for i in range(n)]


def test_curve_random_run_count():
    calls = []
    pts = learning_curve(_pool(), [10], 5, [1, 2, 3], lambda sub, seed, k, sample: calls.append((k, sample, seed)) or 0.5)
    assert len(calls) == 15 and len(pts[0].runs) == 15
    assert sorted({c[1] for c in calls}) == [0, 1, 2, 3, 4]


def test_curve_coverage_collapses_samples():
    seen = []
    pts = learning_curve(_pool(), [10, 20], 5, [1, 2, 3],
                         lambda sub, seed, k, sample: seen.append(sub) or len(sub) / 100, mode="coverage")
    assert [len(p.runs) for p in pts] == [3, 3]
    assert pts[1].mean == pytest.approx(0.2) and pts[1].std == 0.0
    assert [s.coverage for s in seen[0]] == sorted((s.coverage for s in _pool()), reverse=True)[:10]


def test_curve_aggregates_match_direct_computation():
    accs = iter(np.random.default_rng(0).uniform(size=30))
    pts = learning_curve(_pool(), [5, 15], 5, [1, 2, 3], lambda *a: next(accs))
    for p in pts:
        vals = [r[2] for r in p.runs]
        assert p.mean == pytest.approx(np.mean(vals)) and p.std == pytest.approx(np.std(vals, ddof=1))


def test_curve_run_error_names_run():
    def boom(sub, seed, k, sample):
        raise RuntimeError("x")
    with pytest.raises(CurveRunError, match="k=5 sample=0 seed=7"):
        learning_curve(_pool(), [5], 2, [7], boom)
