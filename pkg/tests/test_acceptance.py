"""Acceptance suite: one pass/fail line per criterion in the terminal summary.

Tolerances are the published ones; failing criteria are left failing.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import logsumexp

import conftest
from repair.baselines import TAU_GRID, LogitAdjScorer
from repair.diagnostics import (BayesScorer, fit_offsets_from_gaps, offset_scan,
                                oracle_residuals, orderings_agree, restricted_log_posterior,
                                scan_witnesses)
from repair.features import FeatureConfig
from repair.model import ModelScorer, PreparedExample, fit, objective
from repair.pipeline import (CLASSWISE, HIT1_TOL, REPAIR, TARGET_ABLATION, aggregate, check_fig2,
                             check_fig3, check_table5, run_seeds)
from repair.shortlist import build_shortlists
from repair.synth import CLASS_SEPARABLE, NON_CLASS_SEPARABLE, SyntheticSpec, generate
from repair.types import ModelParams

TESTS = Path(__file__).parent
SEEDS = (0, 1, 2, 3, 4)


def record(n, ok, detail):
    conftest.ACCEPTANCE_LINES.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


@pytest.fixture(scope="module")
def five_seed():
    t0 = time.perf_counter()
    agg = {regime: aggregate(run_seeds(regime, SEEDS))
           for regime in (CLASS_SEPARABLE, NON_CLASS_SEPARABLE)}
    per_seed = (time.perf_counter() - t0) / len(SEEDS)
    return agg, per_seed


@pytest.mark.slow
def test_criterion_1_gap_closure(five_seed):
    agg, per_seed = five_seed
    rows = check_fig2(agg)
    fast = per_seed < 120.0
    parts = [f"{r['regime'][:3]}/{r['method']} rho={r['rho_mean']:.3f} "
             f"(target {r['target']}+-{r['tol']})" for r in rows]
    ok = all(r["pass"] for r in rows) and fast
    detail = "; ".join(parts) + f"; {per_seed:.1f}s per seed (all k, both regimes)"
    assert record(1, ok, detail)


@pytest.mark.slow
def test_criterion_2_hit1_table(five_seed):
    agg, _ = five_seed
    rows = check_table5(agg)
    bad = [f"{r['regime'][:3]}/{r['method']}@{r['k']}={r['hit1_mean']:.1f} vs {r['target']}"
           for r in rows if not r["pass"]]
    n_ok = len(rows) - len(bad)
    detail = f"{n_ok}/{len(rows)} cells within +-{HIT1_TOL}"
    if bad:
        detail += "; off: " + ", ".join(bad)
    assert record(2, not bad, detail)


@pytest.mark.slow
def test_criterion_3_quintiles(five_seed):
    agg, _ = five_seed
    rows = check_fig3(agg)
    ncs = agg[NON_CLASS_SEPARABLE]["quintiles"][0]
    cs = agg[CLASS_SEPARABLE]["quintiles"][0]
    detail = ("non-sep gains " + " ".join(f"{g:+.3f}" for g in ncs)
              + "; class-sep gains " + " ".join(f"{g:+.3f}" for g in cs)
              + f" (spread {max(cs) - min(cs):.3f}); "
              + ", ".join(f"{r['check']} {'ok' if r['pass'] else 'off'}" for r in rows))
    assert record(3, all(r["pass"] for r in rows), detail)


@pytest.mark.slow
def test_criterion_4_ablation(five_seed):
    agg, _ = five_seed
    ncs = {m: 100 * agg[NON_CLASS_SEPARABLE]["hit1"][10][m][0] for m in TARGET_ABLATION}
    checks = {m: abs(ncs[m] - target) <= HIT1_TOL for m, target in TARGET_ABLATION.items()}
    cs = agg[CLASS_SEPARABLE]["hit1"][10]
    gap = 100 * abs(cs[CLASSWISE][0] - cs[REPAIR][0])
    ok = all(checks.values()) and gap <= 0.5
    detail = ("non-sep k=10 " + ", ".join(f"{m}={ncs[m]:.1f} (target {t})"
                                          for m, t in TARGET_ABLATION.items())
              + f"; class-sep |CW-only - REPAIR| = {gap:.2f} pts (<= 0.5)")
    assert record(4, ok, detail)


def _fd_grad(params, data, eps=1e-5):
    x = np.concatenate([params.a, params.theta])
    out = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = objective(params.replace(a=xp[:params.K], theta=xp[params.K:]), data)[0]
        fm = objective(params.replace(a=xm[:params.K], theta=xm[params.K:]), data)[0]
        out[i] = (fp - fm) / (2 * eps)
    return out


def test_criterion_5_gradient_oracle():
    rng = np.random.default_rng(2024)
    K, k, d = 8, 4, 5
    data = []
    for _ in range(5):
        sl = rng.choice(K, size=k, replace=False)
        g = -np.sort(-rng.normal(size=k))
        data.append(PreparedExample(sl, g, int(rng.integers(k)), rng.normal(size=(k, k - 1, d))))
    worst = 0.0
    for _ in range(20):
        p = ModelParams(rng.normal(size=K), rng.normal(size=d), 1e-2, 1e-2)
        g = objective(p, data)[1]
        fd = _fd_grad(p, data)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    assert record(5, worst <= 1e-5, f"max relative error {worst:.2e} over 20 points (<= 1e-5)")


def _grid_values(data, K, d, lam, P):
    """Penalised objective at grid points ``P`` = (offset differences to the
    last class, theta); offsets are centred, which the penalty prefers."""
    sl = np.stack([e.shortlist for e in data])
    g = np.stack([e.base_scores for e in data])
    pos = np.array([e.true_position for e in data])
    F = np.stack([e.rival_means for e in data])
    a = np.concatenate([P[:, :K - 1], np.zeros((len(P), 1))], axis=1)
    a -= a.mean(axis=1, keepdims=True)
    th = P[:, K - 1:]
    r = g[None] + a[:, sl] + np.einsum("nkd,md->mnk", F, th)
    nll = (logsumexp(r, axis=2) - r[:, np.arange(len(data)), pos]).sum(axis=1)
    return nll + lam * (a * a).sum(axis=1) + lam * (th * th).sum(axis=1)


def _grid_optimum(data, K, d, lam):
    """Coarse-to-fine exhaustive search ending at step 1e-3 (objective is convex)."""
    dim = K - 1 + d
    centre = np.zeros(dim)
    for step, half in ((0.1, 40), (0.01, 15), (1e-3, 15)):
        axes = [c + step * np.arange(-half, half + 1) for c in centre]
        P = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim)
        vals = np.concatenate([_grid_values(data, K, d, lam, P[i:i + 100000])
                               for i in range(0, len(P), 100000)])
        best = int(np.argmin(vals))
        centre = P[best]
        # the optimum must be interior, otherwise the window was too small
        assert np.all(np.abs(centre - np.array([ax[half] for ax in axes])) < step * half)
    return vals[best]


def test_criterion_6_optimizer_oracle():
    lam = 1e-3
    worst = 0.0
    below = True
    for seed in range(3):
        for K, d in ((3, 1), (2, 2), (4, 0)):
            rng = np.random.default_rng(seed)
            data = []
            for _ in range(30):
                sl = rng.choice(K, size=2, replace=False)
                g = -np.sort(-rng.normal(size=2))
                data.append(PreparedExample(sl, g, int(rng.integers(2)),
                                            rng.normal(size=(2, 1, d))))
            p = fit(data, lambda_a=lam, lambda_theta=lam, K=K)
            fitted = objective(p, data)[0]
            grid = _grid_optimum(data, K, d, lam)
            worst = max(worst, abs(fitted - grid))
            below &= fitted <= grid + 1e-12
    ok = worst <= 1e-6 and below
    assert record(6, ok, f"max |fit - grid| = {worst:.2e} over 9 instances (<= 1e-6), "
                         f"fit never above grid: {below}")


def test_criterion_7_logit_adjust_equivalence(cs_synth):
    stats = cs_synth.calib.stats
    batch = build_shortlists(cs_synth.test, 10).covered_only()
    agree = []
    for tau in TAU_GRID:
        p = ModelParams(-tau * np.log(stats.priors), np.zeros(5),
                        feature_layout=FeatureConfig(use_similarity=True).layout)
        ours = ModelScorer(p, stats, cs_synth.test.similarity)(batch).argmax(axis=1)
        ref = LogitAdjScorer(stats, tau)(batch).argmax(axis=1)
        agree.append(float(np.mean(ours == ref)))
    ok = min(agree) == 1.0
    assert record(7, ok, f"argmax agreement {min(agree):.4f} minimum over tau in {TAU_GRID}, "
                         f"{len(batch)} covered examples")


def test_criterion_8_witnesses(ncs_synth):
    batch = build_shortlists(ncs_synth.test, 10).covered_only()
    truth = restricted_log_posterior(ncs_synth, batch)
    found = scan_witnesses(batch, truth, K=ncs_synth.K, pairs=ncs_synth.confuser_pairs)
    infeasible = all(offset_scan(w.t_u, w.t_v).size == 0 for w in found)
    clean = generate(SyntheticSpec(noise_var=0.0, seed=0))
    cb = build_shortlists(clean.test, 10).covered_only()
    spurious = scan_witnesses(cb, restricted_log_posterior(clean, cb), K=clean.K)
    ok = len(found) >= 1 and infeasible and not spurious
    assert record(8, ok, f"{len(found)}/{len(ncs_synth.confuser_pairs)} planted pairs with a "
                         f"witness, offset scan empty for all: {infeasible}; "
                         f"{len(spurious)} witnesses on noiseless class-separable data")


INVARIANT_TESTS = [
    "test_shortlist.py::test_determinism_and_shift_invariance",
    "test_model.py::test_softmax_normalised",
    "test_synth.py::test_posterior_normalised_and_nearest_mean",
    "test_shrinkage.py::test_convexity",
    "test_shrinkage.py::test_monotone_in_count",
    "test_metrics.py::test_report_invariants",
    "test_features.py::test_antisymmetry_and_symmetry",
    "test_formats.py::test_dense_round_trip_is_exact",
    "test_formats.py::test_sparse_round_trip",
    "test_formats.py::test_class_stats_round_trip_and_errors",
    "test_formats.py::test_similarity_round_trip_and_errors",
    "test_formats.py::test_model_round_trip",
    "test_formats.py::test_report_round_trip_and_keys",
]


def test_criterion_9_invariant_suite():
    ids = [str(TESTS / t) for t in INVARIANT_TESTS]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
                          capture_output=True, text=True, cwd=TESTS.parent)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    assert record(9, proc.returncode == 0, f"{len(ids)} property tests: {tail}")


def test_criterion_10_fixed_offsets_recover_bayes_order():
    ds = generate(SyntheticSpec(noise_var=0.0, seed=0))
    batch = build_shortlists(ds.test, 10).covered_only()
    fit_ = fit_offsets_from_gaps(oracle_residuals(ds, batch), batch, ds.K)
    corrected = batch.base_scores + fit_.a[batch.shortlist]
    frac = float(np.mean(orderings_agree(corrected, BayesScorer(ds)(batch))))
    assert record(10, frac == 1.0, f"full shortlist order matches Bayes on {100 * frac:.2f}% "
                                   f"of {len(batch)} covered examples "
                                   f"(gap residual std {fit_.residual_std:.1e})")
