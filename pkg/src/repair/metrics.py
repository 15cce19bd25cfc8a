"""Coverage-conditioned ranking metrics.

All probabilities are formed from integer counts and divided once at the
end. A scorer is any callable mapping a shortlist batch to ``(n, k)``
scores aligned with the shortlist.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import errors
from .types import ClassStats, EvalReport, ShortlistBatch

Scorer = Callable[[ShortlistBatch], np.ndarray]


def rank_of_truth(reranked, true_position: int, class_ids=None) -> int:
    """1-based rank of the true label under ``reranked``.

    Equal scores are ordered by ascending class id; ``class_ids`` defaults
    to the shortlist positions themselves.
    """
    s = np.asarray(reranked, dtype=float)
    if not 0 <= true_position < s.shape[0]:
        raise errors.Uncovered("true label is not in the shortlist")
    ids = np.arange(s.shape[0]) if class_ids is None else np.asarray(class_ids)
    t = s[true_position]
    ahead = (s > t) | ((s == t) & (ids < ids[true_position]))
    return int(ahead.sum()) + 1


def truth_ranks(scores, true_position, shortlist) -> np.ndarray:
    """Vectorised :func:`rank_of_truth`; uncovered rows get rank 0."""
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(true_position)
    if s.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    rows = np.arange(s.shape[0])
    safe = np.where(pos >= 0, pos, 0)
    t = s[rows, safe][:, None]
    c = np.asarray(shortlist)[rows, safe][:, None]
    ahead = (s > t) | ((s == t) & (shortlist < c))
    return np.where(pos >= 0, ahead.sum(axis=1) + 1, 0).astype(np.int64)


def _frac(num: int, den: int) -> float | None:
    return num / den if den else None


def hardest_rival_flips(batch: ShortlistBatch, base_scores, method_scores):
    """Counts behind the hardest-rival flip rate on covered examples.

    Returns ``(flips, n_base_errors)`` where a base error is a covered
    example the base scorer does not rank first, and a flip means the method
    scores the truth strictly above the base model's strongest wrong class.
    """
    cov = np.flatnonzero(batch.covered)
    if cov.size == 0:
        return 0, 0
    g = np.asarray(base_scores, dtype=float)[cov]
    r = np.asarray(method_scores, dtype=float)[cov]
    sl = batch.shortlist[cov]
    pos = batch.true_position[cov]
    errs = truth_ranks(g, pos, sl) > 1
    if not errs.any():
        return 0, 0
    g, r, sl, pos = g[errs], r[errs], sl[errs], pos[errs]
    rows = np.arange(g.shape[0])
    masked = g.copy()
    masked[rows, pos] = -np.inf
    # argmax returns the first maximum, i.e. the lowest position (lowest id among ties
    # because shortlists are ordered by score then id)
    h = np.argmax(masked, axis=1)
    flips = int(np.sum(r[rows, pos] > r[rows, h]))
    return flips, int(errs.sum())


def hfr(contexts, scorer_base: Scorer, scorer_method: Scorer) -> float:
    """Hardest-rival flip rate; raises :class:`NoBaseErrors` when undefined."""
    batch = ShortlistBatch.from_contexts(contexts)
    flips, n_err = hardest_rival_flips(batch, scorer_base(batch), scorer_method(batch))
    if n_err == 0:
        raise errors.NoBaseErrors("no covered base errors; HFR undefined")
    return flips / n_err


def rho_k(report_method, report_base) -> float:
    """Fraction of the base model's covered top-1 failures that are recovered."""
    h = getattr(report_method, "hit1", report_method)
    h0 = getattr(report_base, "hit1", report_base)
    if h0 >= 1.0:
        raise errors.SaturatedBase("base Hit@1 is 1; no recoverable gap")
    return (h - h0) / (1.0 - h0)


def unconditional(report: EvalReport) -> float:
    """Unconditional Hit@1, i.e. conditional Hit@1 times coverage."""
    return report.hit1 * report.recall_at_k


def rho_k_unconditional(acc: float, acc_base: float, coverage: float) -> float:
    """Same gap closure written with unconditional accuracies."""
    if coverage - acc_base <= 0:
        raise errors.SaturatedBase("base accuracy equals coverage")
    return (acc - acc_base) / (coverage - acc_base)


def evaluate(contexts, scorer: Scorer, stats: ClassStats, base_scorer: Scorer | None = None,
             per_class: bool = False, dispersions=None) -> EvalReport:
    """Evaluate ``scorer`` on all contexts, conditioning on coverage.

    ``recall_at_k`` uses every context; the other metrics use covered ones.
    With ``base_scorer`` the report also carries HFR and ``rho_k``; without
    it those are None. ``per_class`` adds ``{class: (hits, total, D)}`` where
    ``D`` comes from ``dispersions`` (NaN when absent).
    """
    batch = ShortlistBatch.from_contexts(contexts)
    n = len(batch)
    if n == 0:
        raise errors.EmptyInput("no contexts to evaluate")
    cov = np.flatnonzero(batch.covered)
    if cov.size == 0:
        raise errors.NoCoveredExamples("no covered examples")
    scores = scorer(batch)
    ranks = truth_ranks(scores, batch.true_position, batch.shortlist)[cov]
    n_cov = int(cov.size)
    counts = np.bincount(ranks, minlength=batch.k + 1)
    hits1, hits3 = int(counts[1]), int(counts[1:4].sum())
    mrr = math.fsum(counts[r] / r for r in range(1, counts.shape[0])) / n_cov
    labels = batch.labels[cov]
    rare = stats.rare_mask[labels]
    top1 = ranks == 1
    rho = hfr_value = None
    n_err = 0
    if base_scorer is not None:
        base = base_scorer(batch)
        base_hits = int(np.sum(truth_ranks(base, batch.true_position, batch.shortlist)[cov] == 1))
        if base_hits < n_cov:
            rho = rho_k(hits1 / n_cov, base_hits / n_cov)
        flips, n_err = hardest_rival_flips(batch, base, scores)
        hfr_value = _frac(flips, n_err)
    table = None
    if per_class:
        K = stats.K
        hits_c = np.bincount(labels, weights=top1, minlength=K).astype(np.int64)
        tot_c = np.bincount(labels, minlength=K)
        disp = np.full(K, np.nan) if dispersions is None else np.asarray(dispersions, float)
        table = {int(c): (int(hits_c[c]), int(tot_c[c]), float(disp[c]))
                 for c in np.flatnonzero(tot_c)}
    return EvalReport(hit1=hits1 / n_cov, hit3=hits3 / n_cov, mrr=mrr,
                      rare_hit1=_frac(int(top1[rare].sum()), int(rare.sum())),
                      freq_hit1=_frac(int(top1[~rare].sum()), int((~rare).sum())),
                      hfr=hfr_value, recall_at_k=n_cov / n, rho_k=rho,
                      n_covered=n_cov, n_base_errors=n_err, per_class=table)


def per_class_hits(contexts, scorer: Scorer, K: int):
    """Covered top-1 hits and covered totals per true class."""
    batch = ShortlistBatch.from_contexts(contexts).covered_only()
    if len(batch) == 0:
        return np.zeros(K, dtype=np.int64), np.zeros(K, dtype=np.int64)
    top1 = truth_ranks(scorer(batch), batch.true_position, batch.shortlist) == 1
    return (np.bincount(batch.labels, weights=top1, minlength=K).astype(np.int64),
            np.bincount(batch.labels, minlength=K))
