"""Empirical-Bayes shrinkage of classwise offsets toward frequency-group means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import errors
from .types import ModelParams

NU2_FLOOR = 1e-6


@dataclass(frozen=True)
class ShrinkageGroups:
    group_of: np.ndarray
    n_groups: int

    def __post_init__(self):
        g = np.asarray(self.group_of, dtype=np.int64)
        if g.ndim != 1 or (g.size and (g.min() < 0 or g.max() >= self.n_groups)):
            raise errors.ValidationError("group indices must lie in [0, n_groups)")
        object.__setattr__(self, "group_of", g)

    @classmethod
    def single(cls, K: int) -> "ShrinkageGroups":
        return cls(np.zeros(K, dtype=np.int64), 1)

    @classmethod
    def by_frequency(cls, counts, n_groups: int) -> "ShrinkageGroups":
        """Equal-size bands of classes ordered by ascending training count."""
        counts = np.asarray(counts)
        K = counts.shape[0]
        if not 1 <= n_groups <= K:
            raise errors.ValidationError("need 1 <= n_groups <= K")
        order = np.lexsort((np.arange(K), counts))
        group_of = np.empty(K, dtype=np.int64)
        for b, members in enumerate(np.array_split(order, n_groups)):
            group_of[members] = b
        return cls(group_of, n_groups)


def covered_label_counts(true_labels, K: int) -> np.ndarray:
    """Covered calibration examples per true class."""
    return np.bincount(np.asarray(true_labels, dtype=np.int64), minlength=K)


def estimate_variances(a_hat, covered_counts, groups: ShrinkageGroups, eps: float = NU2_FLOOR):
    """Within-class and between-class variance estimates.

    Returns
    -------
    sigma2 : ndarray (K,)
        ``1 / (covered_count + 1)``.
    mu : ndarray (n_groups,)
        Count-weighted mean of ``a_hat`` in each group (plain mean when the
        group has no covered examples).
    nu2 : ndarray (n_groups,)
        Population variance of ``a_hat`` in the group minus the group's mean
        ``sigma2``, floored at ``eps``.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    counts = np.asarray(covered_counts)
    if np.any(counts < 0):
        raise errors.ValidationError("covered counts must be non-negative")
    sigma2 = 1.0 / (counts + 1.0)
    mu = np.empty(groups.n_groups)
    nu2 = np.empty(groups.n_groups)
    for b in range(groups.n_groups):
        members = groups.group_of == b
        if not members.any():
            raise errors.EmptyGroup(f"shrinkage group {b} has no classes")
        w = counts[members].astype(float)
        vals = a_hat[members]
        mu[b] = np.average(vals, weights=w) if w.sum() > 0 else vals.mean()
        nu2[b] = max(vals.var() - sigma2[members].mean(), eps)
    return sigma2, mu, nu2


def shrink(a_hat, sigma2, mu, nu2, groups: ShrinkageGroups) -> np.ndarray:
    """Posterior-mean offsets ``(1 - lam) a_hat + lam mu``, ``lam = s2 / (s2 + nu2)``."""
    sigma2 = np.asarray(sigma2, dtype=float)
    nu2 = np.asarray(nu2, dtype=float)
    if np.any(sigma2 <= 0) or np.any(nu2 <= 0):
        raise errors.NonPositiveVariance("shrinkage variances must be positive")
    b = groups.group_of
    lam = sigma2 / (sigma2 + nu2[b])
    return (1.0 - lam) * np.asarray(a_hat, dtype=float) + lam * np.asarray(mu)[b]


def shrink_params(params: ModelParams, covered_counts, groups: ShrinkageGroups | None = None,
                  eps: float = NU2_FLOOR) -> ModelParams:
    """Apply shrinkage once to the offsets of a fitted model."""
    groups = groups or ShrinkageGroups.single(params.K)
    sigma2, mu, nu2 = estimate_variances(params.a, covered_counts, groups, eps)
    a_star = shrink(params.a, sigma2, mu, nu2, groups)
    info = dict(params.fit_info)
    info["shrinkage_groups"] = groups.n_groups
    return params.replace(a=a_star, shrunk=True, fit_info=info)
