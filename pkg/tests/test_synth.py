import dataclasses

import numpy as np
import pytest
from scipy import stats as sps

from repair import errors
from repair.diagnostics import restricted_log_posterior, threshold
from repair.shortlist import build_shortlists
from repair.synth import (SyntheticSpec, attach_sidecar, generate, load_sidecar,
                          mean_similarity, save_sidecar, true_posterior, zipf_prior)


def test_deterministic(small_ncs):
    again = generate(small_ncs.spec)
    assert np.array_equal(again.calib.dense_scores(), small_ncs.calib.dense_scores())
    assert np.array_equal(again.test.dense_scores(), small_ncs.test.dense_scores())
    assert again.confuser_pairs == small_ncs.confuser_pairs
    assert again.calib.fingerprint() == small_ncs.calib.fingerprint()
    other = generate(SyntheticSpec(K=20, n_train=800, n_test=400, seed=4))
    assert not np.array_equal(other.test.dense_scores()[:5], small_ncs.test.dense_scores()[:5])


def test_spec_validation():
    with pytest.raises(errors.InvalidSpec):
        SyntheticSpec(n_confusers=3)
    with pytest.raises(errors.InvalidSpec):
        SyntheticSpec(regime="other")
    with pytest.raises(errors.InvalidSpec):
        SyntheticSpec.for_regime("non_class_separable", K=10)
    s = SyntheticSpec.for_regime("non-class-separable")
    assert s.n_confusers == 15 and s.delta == 3.0 and s.n_calib == 5000


def test_uncorrupted_scores_rank_like_posterior():
    ds = generate(SyntheticSpec(K=30, n_train=300, n_test=300, noise_var=0.0,
                                corruption_c=0.0, seed=7))
    post = true_posterior(ds, ds.inputs)
    scores = np.vstack([ds.calib.dense_scores(), ds.test.dense_scores()])
    assert np.array_equal(np.argsort(-scores, axis=1), np.argsort(-post, axis=1))


def test_posterior_normalised_and_nearest_mean():
    ds = generate(SyntheticSpec(K=25, n_train=10, n_test=10, seed=1))
    x = np.random.default_rng(0).normal(size=(1000, ds.spec.dim)) * 2
    p = true_posterior(ds, x)
    assert np.all(np.abs(p.sum(1) - 1.0) <= 1e-12)
    means = np.zeros((3, 2))
    means[1] = [50.0, 0.0]
    means[2] = [0.0, 50.0]
    ds2 = dataclasses.replace(ds, means=means, prior=zipf_prior(3))
    assert np.argmax(true_posterior(ds2, means[1])) == 1


def test_alpha_identity(small_synth):
    batch = build_shortlists(small_synth.test, 5)
    post = true_posterior(small_synth, small_synth.inputs_for(batch.example_ids))
    alpha = np.take_along_axis(post, batch.shortlist, axis=1).sum(1)
    s = restricted_log_posterior(small_synth, batch)
    # s*_y = log P(y|x) - log alpha(x)
    lp = np.log(np.take_along_axis(post, batch.shortlist, axis=1))
    assert np.allclose(s, lp - np.log(alpha)[:, None], atol=1e-10)
    assert np.all(alpha <= 1 + 1e-12)


def test_zipf_histogram():
    K = 20
    prior = zipf_prior(K)
    assert np.allclose(prior * np.arange(1, K + 1), prior[0])
    pvals = []
    for seed in range(5):
        ds = generate(SyntheticSpec(K=K, n_train=4000, n_test=10, seed=seed))
        counts = ds.calib.stats.counts
        pvals.append(sps.chisquare(counts, counts.sum() * prior).pvalue)
    assert min(pvals) > 1e-3


def test_confuser_pairs_are_tail_head(ncs_synth):
    prior = ncs_synth.prior
    order = np.argsort(-prior)
    head, tail = set(order[:20]), set(order[50:])
    assert len(ncs_synth.confuser_pairs) == 15
    for u, v in ncs_synth.confuser_pairs:
        assert u in tail and v in head


def _pair_thresholds(ds, u, v, k=10):
    batch = build_shortlists(ds.test, k)
    return np.array([threshold(c, u, v) for c in batch
                     if u in c.shortlist and v in c.shortlist])


def test_planted_pairs_cross_and_delta_zero_does_not_spread(ncs_synth):
    spread, spread0 = [], []
    flat = generate(ncs_synth.spec.__class__.for_regime(
        "non_class_separable", delta=0.0, seed=ncs_synth.spec.seed))
    crossing = 0
    for u, v in ncs_synth.confuser_pairs:
        t = _pair_thresholds(ncs_synth, u, v)
        t0 = _pair_thresholds(flat, u, v)
        if t.size >= 2:
            crossing += int(t.min() < 0 < t.max())
            spread.append(t.std())
        if t0.size >= 2:
            spread0.append(t0.std())
    assert crossing >= 1
    assert np.mean(spread) > np.mean(spread0)


def test_delta_zero_matches_class_separable_scores():
    a = generate(SyntheticSpec.for_regime("non_class_separable", K=40, n_train=200, n_test=50,
                                          n_confusers=5, delta=0.0, seed=2))
    b = generate(SyntheticSpec(K=40, n_train=200, n_test=50, seed=2))
    assert np.allclose(a.test.dense_scores(), b.test.dense_scores())


def test_mean_similarity_bounds(small_synth):
    m = mean_similarity(small_synth.means).matrix.toarray()
    assert np.allclose(m, m.T) and np.all(np.diag(m) == 1.0)
    assert m.min() >= 0.0 and m.max() <= 1.0


def test_sidecar_round_trip(small_ncs, tmp_path):
    path = tmp_path / "oracle.npz"
    save_sidecar(small_ncs, path)
    back = attach_sidecar(small_ncs.calib, small_ncs.test, load_sidecar(path))
    assert back.spec == small_ncs.spec
    assert back.confuser_pairs == small_ncs.confuser_pairs
    assert np.array_equal(back.inputs, small_ncs.inputs)
