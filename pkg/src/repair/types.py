"""Shared domain types.

Arrays stored on the frozen dataclasses below are made read-only at
construction, so instances can be shared freely once built.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import errors

RARE_FRACTION = 0.8
ROLES = ("calibration", "test")


def _frozen(arr, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def rare_mask_from_counts(counts) -> np.ndarray:
    """Mark the bottom ``ceil(0.8 K)`` classes by count as rare.

    Ties in the count are broken by ascending class index, i.e. among equally
    frequent classes the lower index is considered rarer.
    """
    counts = np.asarray(counts)
    K = counts.shape[0]
    n_rare = math.ceil(RARE_FRACTION * K)
    order = np.lexsort((np.arange(K), counts))
    mask = np.zeros(K, dtype=bool)
    mask[order[:n_rare]] = True
    return mask


@dataclass(frozen=True)
class ClassStats:
    """Per-class training counts, optional classifier weight norms and the
    rare/frequent split derived from the counts."""

    counts: np.ndarray
    weight_norms: np.ndarray | None = None
    rare_mask: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.shape[0] == 0:
            raise errors.ValidationError("counts must be a non-empty 1-D array")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.equal(np.mod(counts, 1), 0)):
                raise errors.ValidationError("counts must be integers")
        if np.any(counts < 0):
            raise errors.ValidationError("counts must be non-negative")
        object.__setattr__(self, "counts", _frozen(counts, np.int64))
        if self.weight_norms is not None:
            norms = np.asarray(self.weight_norms, dtype=float)
            if norms.shape != counts.shape:
                raise errors.DimensionMismatch("weight_norms must have length K")
            object.__setattr__(self, "weight_norms", _frozen(norms))
        mask = self.rare_mask
        if mask is None:
            mask = rare_mask_from_counts(counts)
        elif np.asarray(mask).shape != counts.shape:
            raise errors.DimensionMismatch("rare_mask must have length K")
        object.__setattr__(self, "rare_mask", _frozen(mask, bool))

    @property
    def K(self) -> int:
        return int(self.counts.shape[0])

    @property
    def priors(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            return np.full(self.K, 1.0 / self.K)
        return self.counts / total


class Similarity:
    """Symmetric class-similarity lookup backed by a sparse matrix.

    Missing off-diagonal entries read as 0 and the diagonal is always 1.
    """

    def __init__(self, matrix, K: int | None = None, check: bool = True):
        m = sp.csr_matrix(matrix, dtype=float)
        if K is not None and m.shape != (K, K):
            raise errors.DimensionMismatch(f"similarity must be {K}x{K}, got {m.shape}")
        if m.shape[0] != m.shape[1]:
            raise errors.DimensionMismatch("similarity matrix must be square")
        if check:
            diff = abs(m - m.T)
            if diff.nnz and diff.max() > 1e-12:
                raise errors.AsymmetricSimilarity("similarity matrix is not symmetric")
            if m.nnz and (m.data.min() < 0.0 or m.data.max() > 1.0):
                raise errors.ValidationError("similarity values must lie in [0, 1]")
            diag = m.diagonal()
            stored = np.zeros(m.shape[0], dtype=bool)
            rows, cols = m.nonzero()
            stored[rows[rows == cols]] = True
            if np.any(np.abs(diag[stored] - 1.0) > 1e-12):
                raise errors.ValidationError("similarity diagonal must equal 1")
        m = m.tolil()
        m.setdiag(1.0)
        self.matrix = m.tocsr()
        self.matrix.sort_indices()
        self._dense = self.matrix.toarray() if self.matrix.shape[0] <= 4096 else None

    @classmethod
    def from_triplets(cls, K: int, rows, cols, values) -> "Similarity":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        m = sp.coo_matrix((values, (rows, cols)), shape=(K, K)).tocsr()
        return cls(m, K=K)

    @property
    def K(self) -> int:
        return int(self.matrix.shape[0])

    def lookup(self, i, j) -> np.ndarray:
        i = np.asarray(i)
        j = np.asarray(j)
        if self._dense is not None:
            return self._dense[i, j]
        ib, jb = np.broadcast_arrays(i, j)
        vals = np.asarray(self.matrix[ib.ravel(), jb.ravel()]).ravel()
        return vals.reshape(ib.shape)

    def triplets(self):
        """Upper-triangle ``(i, j, value)`` arrays, ``i < j``, sorted."""
        upper = sp.triu(self.matrix, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return upper.row[order], upper.col[order], upper.data[order]


@dataclass(frozen=True)
class ScoreRecord:
    """One example's base-model scores.

    ``classes is None`` means a dense record whose ``scores`` has one entry
    per class; otherwise ``scores[i]`` is the score of class ``classes[i]``.
    """

    example_id: int
    true_label: int
    scores: np.ndarray
    classes: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "scores", _frozen(self.scores, float))
        if self.classes is not None:
            classes = _frozen(self.classes, np.int64)
            if classes.shape != self.scores.shape:
                raise errors.DimensionMismatch("sparse classes/scores length differ")
            if np.unique(classes).size != classes.size:
                raise errors.ValidationError(
                    f"record {self.example_id}: duplicate class ids in sparse scores")
            object.__setattr__(self, "classes", classes)

    @property
    def is_sparse(self) -> bool:
        return self.classes is not None

    @property
    def n_scored(self) -> int:
        return int(self.scores.shape[0])

    def class_ids(self) -> np.ndarray:
        if self.classes is None:
            return np.arange(self.scores.shape[0])
        return self.classes


@dataclass(frozen=True)
class Dataset:
    records: tuple
    stats: ClassStats
    similarity: Similarity | None = None
    role: str = "test"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.role not in ROLES:
            raise errors.ValidationError(f"role must be one of {ROLES}")

    @property
    def K(self) -> int:
        return self.stats.K

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.true_label for r in self.records], dtype=np.int64)

    @property
    def example_ids(self) -> np.ndarray:
        return np.array([r.example_id for r in self.records], dtype=np.int64)

    @property
    def is_dense(self) -> bool:
        return all(not r.is_sparse for r in self.records)

    def dense_scores(self) -> np.ndarray:
        if not self.is_dense:
            raise errors.ValidationError("dataset contains sparse records")
        if not self.records:
            return np.zeros((0, self.K))
        return np.stack([r.scores for r in self.records])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.K).tobytes())
        for r in self.records:
            h.update(np.int64(r.example_id).tobytes())
            h.update(np.int64(r.true_label).tobytes())
            if r.classes is not None:
                h.update(r.classes.tobytes())
            h.update(r.scores.tobytes())
        return h.hexdigest()[:16]


def validate_dataset(d: Dataset, k: int | None = None) -> Dataset:
    """Check every record against the dataset's class count.

    Returns ``d`` itself when all invariants hold. ``k`` enables the check
    that sparse records carry at least ``k`` scored classes.
    """
    K = d.K
    for r in d.records:
        if not 0 <= r.true_label < K:
            raise errors.InvalidLabel(
                f"record {r.example_id}: label {r.true_label} outside [0, {K})")
        if not np.all(np.isfinite(r.scores)):
            raise errors.NonFiniteScore(f"record {r.example_id}: non-finite score")
        if r.is_sparse:
            if r.classes.size and (r.classes.min() < 0 or r.classes.max() >= K):
                raise errors.InvalidLabel(
                    f"record {r.example_id}: sparse class id outside [0, {K})")
            if k is not None and r.n_scored < k:
                raise errors.SparseTooShort(
                    f"record {r.example_id}: {r.n_scored} scored classes < k={k}")
        elif r.n_scored != K:
            raise errors.DimensionMismatch(
                f"record {r.example_id}: dense record has {r.n_scored} scores, K={K}")
    if d.similarity is not None:
        if d.similarity.K != K:
            raise errors.DimensionMismatch("similarity size does not match K")
        m = d.similarity.matrix
        diff = abs(m - m.T)
        if diff.nnz and diff.max() > 1e-12:
            raise errors.AsymmetricSimilarity("similarity matrix is not symmetric")
    return d


@dataclass(frozen=True)
class ShortlistContext:
    """An example reduced to its ordered top-k shortlist."""

    example_id: int
    true_label: int
    shortlist: np.ndarray
    base_scores: np.ndarray
    covered: bool

    def __post_init__(self):
        object.__setattr__(self, "shortlist", _frozen(self.shortlist, np.int64))
        object.__setattr__(self, "base_scores", _frozen(self.base_scores, float))

    @property
    def k(self) -> int:
        return int(self.shortlist.shape[0])

    @property
    def true_position(self) -> int:
        """Index of the true label in the shortlist, -1 when uncovered."""
        hits = np.flatnonzero(self.shortlist == self.true_label)
        return int(hits[0]) if hits.size else -1

    def position(self, cls: int) -> int:
        hits = np.flatnonzero(self.shortlist == cls)
        if not hits.size:
            raise errors.NotInShortlist(f"class {cls} not in shortlist of example {self.example_id}")
        return int(hits[0])

    def score(self, cls: int) -> float:
        return float(self.base_scores[self.position(cls)])


class ShortlistBatch(Sequence):
    """Column-oriented stack of shortlist contexts sharing one ``k``.

    Behaves as a read-only sequence of :class:`ShortlistContext` while
    exposing the underlying ``(n, k)`` arrays for vectorised work.
    """

    def __init__(self, example_ids, labels, shortlist, base_scores):
        self.example_ids = _frozen(example_ids, np.int64)
        self.labels = _frozen(labels, np.int64)
        shortlist = np.asarray(shortlist)
        if shortlist.ndim != 2:
            shortlist = shortlist.reshape(len(self.labels), -1)
        self.shortlist = _frozen(shortlist, np.int64)
        self.base_scores = _frozen(
            np.asarray(base_scores, dtype=float).reshape(self.shortlist.shape))
        match = self.shortlist == self.labels[:, None]
        self.covered = _frozen(match.any(axis=1))
        self.true_position = _frozen(np.where(self.covered, match.argmax(axis=1), -1), np.int64)

    @classmethod
    def from_contexts(cls, contexts: Sequence[ShortlistContext]) -> "ShortlistBatch":
        if isinstance(contexts, ShortlistBatch):
            return contexts
        contexts = list(contexts)
        if not contexts:
            return cls(np.zeros(0), np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0)))
        return cls([c.example_id for c in contexts], [c.true_label for c in contexts],
                   np.stack([c.shortlist for c in contexts]),
                   np.stack([c.base_scores for c in contexts]))

    @property
    def k(self) -> int:
        return int(self.shortlist.shape[1])

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        return ShortlistContext(int(self.example_ids[i]), int(self.labels[i]),
                                self.shortlist[i], self.base_scores[i], bool(self.covered[i]))

    def __iter__(self) -> Iterator[ShortlistContext]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> "ShortlistBatch":
        index = np.asarray(index)
        return ShortlistBatch(self.example_ids[index], self.labels[index],
                              self.shortlist[index], self.base_scores[index])

    def covered_only(self) -> "ShortlistBatch":
        return self.subset(np.flatnonzero(self.covered))


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, float))
        object.__setattr__(self, "layout", tuple(self.layout))
        if self.values.shape != (len(self.layout),):
            raise errors.DimensionMismatch("feature values and layout differ in length")
        if len(self.layout) not in (4, 5):
            raise errors.DimensionMismatch("feature vectors have 4 or 5 entries")
        if not np.all(np.isfinite(self.values)):
            raise errors.NonFiniteScore("non-finite feature value")


@dataclass(frozen=True)
class ModelParams:
    """Fitted reranker parameters.

    ``feature_mean`` / ``feature_scale`` hold the calibration z-scoring
    applied to raw pairwise features before ``theta`` acts on them.
    """

    a: np.ndarray
    theta: np.ndarray
    lambda_a: float = 0.0
    lambda_theta: float = 0.0
    feature_layout: tuple = ()
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    freq_smoothing: float = 1.0
    fitted_on: str = ""
    shrunk: bool = False
    fit_info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(self.a, float))
        object.__setattr__(self, "theta", _frozen(self.theta, float))
        object.__setattr__(self, "feature_layout", tuple(self.feature_layout))
        d = self.theta.shape[0]
        if self.feature_layout and len(self.feature_layout) != d:
            raise errors.DimensionMismatch("theta length differs from feature layout")
        for name in ("feature_mean", "feature_scale"):
            v = getattr(self, name)
            if v is None:
                v = np.zeros(d) if name == "feature_mean" else np.ones(d)
            v = _frozen(v, float)
            if v.shape != (d,):
                raise errors.DimensionMismatch(f"{name} must have length {d}")
            object.__setattr__(self, name, v)
        if self.lambda_a < 0 or self.lambda_theta < 0:
            raise errors.ValidationError("regularisation weights must be non-negative")
        for v in (self.a, self.theta, self.feature_mean, self.feature_scale):
            if not np.all(np.isfinite(v)):
                raise errors.NonFiniteScore("model parameters must be finite")
        if np.any(self.feature_scale <= 0):
            raise errors.ValidationError("feature_scale must be positive")
        object.__setattr__(self, "fit_info", dict(self.fit_info))

    @property
    def K(self) -> int:
        return int(self.a.shape[0])

    @property
    def d(self) -> int:
        return int(self.theta.shape[0])

    def replace(self, **changes) -> "ModelParams":
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return ModelParams(**fields)


REPORT_KEYS = ("hit1", "hit3", "mrr", "rare_hit1", "freq_hit1", "hfr", "recall_at_k",
               "rho_k", "n_covered", "n_base_errors")


@dataclass(frozen=True)
class EvalReport:
    hit1: float
    hit3: float
    mrr: float
    rare_hit1: float | None
    freq_hit1: float | None
    hfr: float | None
    recall_at_k: float
    rho_k: float | None
    n_covered: int
    n_base_errors: int
    per_class: Mapping | None = None

    def __post_init__(self):
        eps = 1e-12
        if not (-eps <= self.hit1 <= self.hit3 + eps and self.hit3 <= 1 + eps):
            raise errors.ValidationError("require 0 <= hit1 <= hit3 <= 1")
        if self.n_covered > 0 and not (self.hit1 - eps <= self.mrr <= 1 + eps):
            raise errors.ValidationError("require hit1 <= mrr <= 1")

    def to_dict(self) -> dict:
        out = {key: getattr(self, key) for key in REPORT_KEYS}
        if self.per_class is not None:
            out["per_class"] = {str(c): list(v) for c, v in sorted(self.per_class.items())}
        return out
