import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from repair import errors
from repair.baselines import base_scorer
from repair.metrics import evaluate
from repair.shortlist import build_shortlist, build_shortlists, coverage, covered_subset
from repair.types import ClassStats, Dataset, ScoreRecord


def test_tie_break_lower_id_first():
    ctx = build_shortlist(ScoreRecord(0, 0, np.array([0.1, 0.9, 0.9, 0.2])), 2)
    assert ctx.shortlist.tolist() == [1, 2]


def test_full_sort_and_coverage():
    ctx = build_shortlist(ScoreRecord(0, 1, np.array([3.0, 1.0, 2.0])), 3)
    assert ctx.shortlist.tolist() == [0, 2, 1]
    assert ctx.covered


def test_uncovered_against_sort_oracle():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=100)
    order = sorted(range(100), key=lambda c: (-scores[c], c))
    label = order[50]
    ctx = build_shortlist(ScoreRecord(0, label, scores), 10)
    assert ctx.shortlist.tolist() == order[:10]
    assert not ctx.covered


def test_too_large():
    with pytest.raises(errors.ShortlistTooLarge):
        build_shortlist(ScoreRecord(0, 0, np.zeros(3)), 4)


def test_coverage_counts():
    recs = [ScoreRecord(i, lab, np.array([3.0, 2.0, 1.0])) for i, lab in enumerate([0, 1, 2])]
    ctxs = [build_shortlist(r, 2) for r in recs]
    assert abs(coverage(ctxs) - 2 / 3) <= 1e-12
    assert coverage(ctxs[:2]) == 1.0
    with pytest.raises(errors.EmptyInput):
        coverage([])


def test_covered_subset_cases():
    stats = ClassStats(np.ones(3, dtype=int))
    none = Dataset(tuple(ScoreRecord(i, 2, np.array([3.0, 2.0, 1.0])) for i in range(4)), stats)
    assert len(covered_subset(none, 2)) == 0
    full = Dataset(tuple(ScoreRecord(i, 0, np.array([3.0, 2.0, 1.0])) for i in range(4)), stats)
    assert len(covered_subset(full, 2)) == 4


def test_covered_subset_matches_coverage(small_synth):
    d = small_synth.test
    batch = build_shortlists(d, 5)
    sub = covered_subset(d, 5)
    assert len(sub) == round(coverage(batch) * len(d))
    # input order is preserved
    assert np.all(np.diff(sub.example_ids) > 0)


def test_coverage_exceeds_unconditional_hit1(cs_synth):
    batch = build_shortlists(cs_synth.test, 10)
    rep = evaluate(batch, base_scorer, cs_synth.test.stats)
    assert rep.recall_at_k > rep.hit1 * rep.recall_at_k


def test_dense_and_sparse_agree():
    rng = np.random.default_rng(4)
    for i in range(50):
        s = rng.normal(size=30).round(1)  # coarse values create ties
        top = np.argsort(-s, kind="stable")[:12]
        dense = build_shortlist(ScoreRecord(i, 0, s), 5)
        perm = rng.permutation(top)
        sparse = build_shortlist(ScoreRecord(i, 0, s[perm], perm), 5)
        assert dense.shortlist.tolist() == sparse.shortlist.tolist()


def test_batch_matches_single(small_synth):
    d = small_synth.calib
    batch = build_shortlists(d, 4)
    for i in range(0, len(d), 97):
        single = build_shortlist(d.records[i], 4)
        assert batch.shortlist[i].tolist() == single.shortlist.tolist()
        assert batch.covered[i] == single.covered


@settings(max_examples=100)
@given(st.lists(st.integers(-8000, 8000), min_size=3, max_size=30), st.integers(-1000, 1000),
       st.integers(1, 3))
def test_determinism_and_shift_invariance(ints, c, k):
    # dyadic scores keep the shifted values exact, ties included
    scores = np.array(ints) / 8.0
    r = ScoreRecord(0, 0, scores)
    a = build_shortlist(r, k)
    b = build_shortlist(r, k)
    assert a.shortlist.tobytes() == b.shortlist.tobytes()
    shifted = build_shortlist(ScoreRecord(0, 0, scores + c / 4.0), k)
    assert shifted.shortlist.tolist() == a.shortlist.tolist()


@given(arrays(np.float64, st.integers(2, 20), elements=st.floats(-5, 5)))
def test_base_scores_non_increasing(scores):
    ctx = build_shortlist(ScoreRecord(0, 0, scores), scores.size)
    g = ctx.base_scores
    assert np.all(np.diff(g) <= 0)
    eq = np.diff(g) == 0
    assert np.all(np.diff(ctx.shortlist)[eq] > 0)
