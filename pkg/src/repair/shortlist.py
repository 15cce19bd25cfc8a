"""Deterministic top-k shortlists and coverage."""

from __future__ import annotations

import numpy as np

from . import errors
from .types import Dataset, ScoreRecord, ShortlistBatch, ShortlistContext

_CHUNK = 4096


def _order(class_ids: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # descending score, ties -> ascending class id
    return np.lexsort((class_ids, -scores))


def build_shortlist(r: ScoreRecord, k: int, K: int | None = None) -> ShortlistContext:
    """Top-``k`` shortlist of one record.

    Classes are ordered by descending base score; equal scores are ordered by
    ascending class id.
    """
    if k < 1:
        raise errors.ValidationError("k must be positive")
    if k > r.n_scored:
        raise errors.ShortlistTooLarge(
            f"k={k} exceeds the {r.n_scored} scored classes of record {r.example_id}")
    ids = r.class_ids()
    if K is not None and ids.size and ids.max() >= K:
        raise errors.InvalidLabel(f"record {r.example_id}: class id outside [0, {K})")
    top = _order(ids, r.scores)[:k]
    shortlist = ids[top]
    return ShortlistContext(r.example_id, r.true_label, shortlist, r.scores[top],
                            bool(np.any(shortlist == r.true_label)))


def top_k_dense(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top-k class indices of a dense ``(n, K)`` score matrix."""
    scores = np.asarray(scores, dtype=float)
    n, K = scores.shape
    if k > K:
        raise errors.ShortlistTooLarge(f"k={k} exceeds K={K}")
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _CHUNK):
        block = scores[start:start + _CHUNK]
        # stable sort keeps ascending index among equal scores
        out[start:start + _CHUNK] = np.argsort(-block, axis=1, kind="stable")[:, :k]
    return out


def build_shortlists(d: Dataset, k: int) -> ShortlistBatch:
    """Shortlists for every record of ``d``, in record order."""
    if k < 1:
        raise errors.ValidationError("k must be positive")
    if d.is_dense and len(d):
        g = d.dense_scores()
        top = top_k_dense(g, k)
        return ShortlistBatch(d.example_ids, d.labels, top, np.take_along_axis(g, top, 1))
    return ShortlistBatch.from_contexts([build_shortlist(r, k, d.K) for r in d.records])


def coverage(contexts) -> float:
    """Fraction of contexts whose true label is in the shortlist (Recall@k)."""
    n = len(contexts)
    if n == 0:
        raise errors.EmptyInput("coverage of an empty list")
    if isinstance(contexts, ShortlistBatch):
        hits = int(contexts.covered.sum())
    else:
        hits = sum(1 for c in contexts if c.covered)
    return hits / n


def covered_subset(d: Dataset, k: int) -> ShortlistBatch:
    """Covered shortlist contexts of ``d`` in input order."""
    return build_shortlists(d, k).covered_only()
