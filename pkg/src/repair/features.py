"""Pairwise competition features phi(x, y, j) on a shortlist."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import errors
from .types import ClassStats, FeatureVector, ShortlistBatch, ShortlistContext, Similarity

BASE_LAYOUT = ("score_gap", "rank_gap", "log_prob_ratio", "log_freq_ratio")
SIMILARITY = "similarity"
_CHUNK = 512


@dataclass(frozen=True)
class FeatureConfig:
    use_similarity: bool = False
    freq_smoothing: float = 1.0

    def __post_init__(self):
        if self.freq_smoothing < 0:
            raise errors.ValidationError("freq_smoothing must be >= 0")

    @property
    def layout(self) -> tuple:
        return BASE_LAYOUT + ((SIMILARITY,) if self.use_similarity else ())

    @property
    def d(self) -> int:
        return len(self.layout)


def _positions(ctx: ShortlistContext, y: int, j: int, allow_same=False):
    if y == j and not allow_same:
        raise errors.SamePair(f"pairwise feature requested for y == j == {y}")
    return ctx.position(y), ctx.position(j)


def score_gap(ctx: ShortlistContext, y: int, j: int) -> float:
    """``g_y(x) - g_j(x)``; the negated base-score threshold ``t(x; y, j)``."""
    p, q = _positions(ctx, y, j)
    return float(ctx.base_scores[p] - ctx.base_scores[q])


def rank_gap(ctx: ShortlistContext, y: int, j: int) -> float:
    p, q = _positions(ctx, y, j)
    return float(q - p)


def log_freq_ratio(stats: ClassStats, y: int, j: int, smoothing: float = 1.0) -> float:
    ny = stats.counts[y] + smoothing
    nj = stats.counts[j] + smoothing
    if nj == 0 or ny == 0:
        raise errors.DivisionByZero(
            f"log-frequency ratio undefined for counts ({stats.counts[y]}, {stats.counts[j]}) "
            f"with smoothing {smoothing}")
    return float(np.log(ny / nj))


def _shortlist_log_probs(scores: np.ndarray) -> np.ndarray:
    # logsumexp subtracts the shared max before exponentiating
    return scores - logsumexp(scores, axis=-1, keepdims=True)


def log_prob_ratio(ctx: ShortlistContext, y: int, j: int) -> float:
    """``log P(y|S) - log P(j|S)`` under the softmax of base scores on the shortlist."""
    p, q = _positions(ctx, y, j)
    logp = _shortlist_log_probs(ctx.base_scores)
    return float(logp[p] - logp[q])


def feature_vector(ctx: ShortlistContext, y: int, j: int, stats: ClassStats,
                   sim: Similarity | None = None,
                   cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    if cfg.use_similarity and sim is None:
        raise errors.SimilarityRequired("feature config requires a similarity matrix")
    values = [score_gap(ctx, y, j), rank_gap(ctx, y, j), log_prob_ratio(ctx, y, j),
              log_freq_ratio(stats, y, j, cfg.freq_smoothing)]
    if cfg.use_similarity:
        values.append(float(sim.lookup(y, j)))
    return FeatureVector(np.array(values), cfg.layout)


def _log_counts(stats: ClassStats, smoothing: float) -> np.ndarray:
    shifted = stats.counts + smoothing
    if np.any(shifted <= 0):
        raise errors.DivisionByZero("zero-count class with freq_smoothing = 0")
    return np.log(shifted)


def pairwise_tensor(batch: ShortlistBatch, stats: ClassStats, sim: Similarity | None,
                    cfg: FeatureConfig, log_counts: np.ndarray | None = None) -> np.ndarray:
    """Raw features for every ordered pair of shortlist positions.

    Returns an ``(n, k, k, d)`` array where ``[i, p, q]`` is
    ``phi(x_i, S_i[p], S_i[q])``. Diagonal entries (``p == q``) are
    meaningless and left as computed.
    """
    if cfg.use_similarity and sim is None:
        raise errors.SimilarityRequired("feature config requires a similarity matrix")
    if log_counts is None:
        log_counts = _log_counts(stats, cfg.freq_smoothing)
    g = batch.base_scores
    n, k = g.shape
    logp = _shortlist_log_probs(g)
    ranks = np.arange(k, dtype=float)
    lc = log_counts[batch.shortlist]
    parts = [g[:, :, None] - g[:, None, :],
             np.broadcast_to(ranks[None, None, :] - ranks[None, :, None], (n, k, k)),
             logp[:, :, None] - logp[:, None, :],
             lc[:, :, None] - lc[:, None, :]]
    if cfg.use_similarity:
        parts.append(sim.lookup(batch.shortlist[:, :, None], batch.shortlist[:, None, :]))
    return np.stack(parts, axis=-1)


@dataclass(frozen=True)
class FeatureTransform:
    """Per-dimension z-scoring fitted on calibration pairs."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "FeatureTransform":
        return cls(np.zeros(d), np.ones(d))


def rival_mean_features(batch: ShortlistBatch, stats: ClassStats, sim: Similarity | None,
                        cfg: FeatureConfig, transform: FeatureTransform | None = None,
                        std_floor: float = 1e-8):
    """Average of standardised ``phi(x, y, j)`` over the rivals ``j`` of each ``y``.

    Because the pairwise correction is linear in the features, this
    ``(n, k, d)`` summary is all the objective needs.

    Returns
    -------
    features : ndarray, shape (n, k, d)
    transform : FeatureTransform
        The transform that was applied; fitted on ``batch`` when ``transform``
        is None (mean and std over all ordered pairs ``y != j``).
    """
    n, k = batch.shortlist.shape
    d = cfg.d
    if k < 2:
        raise errors.SingletonShortlist("pairwise features need k >= 2")
    log_counts = _log_counts(stats, cfg.freq_smoothing)
    off = ~np.eye(k, dtype=bool)
    sums = np.zeros((n, k, d))
    total = np.zeros(d)
    total_sq = np.zeros(d)
    for start in range(0, n, _CHUNK):
        sub = batch.subset(np.arange(start, min(n, start + _CHUNK)))
        phi = pairwise_tensor(sub, stats, sim, cfg, log_counts)
        phi = phi * off[None, :, :, None]
        sums[start:start + len(sub)] = phi.sum(axis=2)
        if transform is None:
            total += phi.sum(axis=(0, 1, 2))
            total_sq += np.square(phi).sum(axis=(0, 1, 2))
    raw_mean = sums / (k - 1)
    if transform is None:
        n_pairs = max(1, n * k * (k - 1))
        mean = total / n_pairs
        var = np.maximum(total_sq / n_pairs - mean ** 2, 0.0)
        transform = FeatureTransform(mean, np.maximum(np.sqrt(var), std_floor))
    return (raw_mean - transform.mean) / transform.scale, transform
