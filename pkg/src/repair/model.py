"""Score model, shortlist softmax and the penalised conditional likelihood.

The reranker scores shortlisted label ``y`` as

    r_y = g_y + a_y + mean_{j != y} theta . phi(x, y, j)

and is fitted by maximising the L2-penalised conditional multinomial-logit
log-likelihood of the true label on covered calibration examples.
Internally everything minimises the *negated* objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import errors
from .features import FeatureConfig, FeatureTransform, pairwise_tensor, rival_mean_features
from .types import ClassStats, ModelParams, ShortlistBatch, Similarity


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 300
    tol: float = 1e-8
    memory: int = 10


@dataclass(frozen=True)
class PreparedExample:
    shortlist: np.ndarray
    base_scores: np.ndarray
    true_position: int
    feature_tensor: np.ndarray  # (k, k-1, d), rival axis in shortlist order

    def __post_init__(self):
        k = self.shortlist.shape[0]
        if self.feature_tensor.shape[:2] != (k, k - 1):
            raise errors.DimensionMismatch("feature tensor must be (k, k-1, d)")
        if not np.all(np.isfinite(self.feature_tensor)):
            raise errors.NonFiniteScore("non-finite feature")
        if not -1 <= self.true_position < k:
            raise errors.ValidationError("true_position out of range")

    @property
    def k(self) -> int:
        return int(self.shortlist.shape[0])

    @property
    def rival_means(self) -> np.ndarray:
        return self.feature_tensor.mean(axis=1)


class PreparedBatch(Sequence):
    """Cached model inputs for a set of shortlist contexts.

    Holds the base scores, the true positions and the rival-averaged
    standardised features; full per-example feature tensors are rebuilt on
    demand by indexing.
    """

    def __init__(self, contexts: ShortlistBatch, stats: ClassStats,
                 sim: Similarity | None = None, cfg: FeatureConfig = FeatureConfig(),
                 transform: FeatureTransform | None = None, fingerprint: str = ""):
        self.contexts = contexts
        self.stats = stats
        self.sim = sim
        self.cfg = cfg
        self.K = stats.K
        self.layout = cfg.layout
        self.shortlist = contexts.shortlist
        self.base_scores = contexts.base_scores
        self.true_position = contexts.true_position
        self.fingerprint = fingerprint
        self.features, self.transform = rival_mean_features(contexts, stats, sim, cfg, transform)

    @property
    def k(self) -> int:
        return int(self.shortlist.shape[1])

    @property
    def d(self) -> int:
        return len(self.layout)

    def __len__(self) -> int:
        return int(self.shortlist.shape[0])

    def __getitem__(self, i) -> PreparedExample:
        sub = self.contexts.subset([i])
        phi = pairwise_tensor(sub, self.stats, self.sim, self.cfg)[0]
        phi = (phi - self.transform.mean) / self.transform.scale
        k = self.k
        off = ~np.eye(k, dtype=bool)
        tensor = phi[off].reshape(k, k - 1, -1)
        return PreparedExample(self.shortlist[i], self.base_scores[i],
                               int(self.true_position[i]), tensor)


def prepare(contexts, stats: ClassStats, sim: Similarity | None = None,
            cfg: FeatureConfig = FeatureConfig(), transform: FeatureTransform | None = None,
            fingerprint: str = "") -> PreparedBatch:
    return PreparedBatch(ShortlistBatch.from_contexts(contexts), stats, sim, cfg,
                         transform, fingerprint)


def transform_of(params: ModelParams) -> FeatureTransform:
    return FeatureTransform(np.asarray(params.feature_mean), np.asarray(params.feature_scale))


def pairwise_correction(ex: PreparedExample, y_pos: int, theta) -> float:
    """Rival-averaged pairwise correction for the label at ``y_pos``."""
    if ex.k < 2:
        raise errors.SingletonShortlist("pairwise correction needs |S| >= 2")
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != ex.feature_tensor.shape[2]:
        raise errors.DimensionMismatch("theta length differs from feature dimension")
    return float(np.mean(ex.feature_tensor[y_pos] @ theta))


def _check_dims(params: ModelParams, K: int, d: int):
    if params.K != K or params.d != d:
        raise errors.DimensionMismatch(
            f"params have K={params.K}, d={params.d}; data has K={K}, d={d}")


def rerank_scores(ex, params: ModelParams) -> np.ndarray:
    """Reranked scores ``r_y`` in shortlist order.

    ``ex`` is a :class:`PreparedExample` (returns shape ``(k,)``) or a
    :class:`PreparedBatch` (returns shape ``(n, k)``).
    """
    if isinstance(ex, PreparedExample):
        if params.d != ex.feature_tensor.shape[2] or int(ex.shortlist.max()) >= params.K:
            raise errors.DimensionMismatch("params do not match the example's K or d")
        return ex.base_scores + params.a[ex.shortlist] + ex.rival_means @ params.theta
    _check_dims(params, ex.K, ex.d)
    return ex.base_scores + params.a[ex.shortlist] + ex.features @ params.theta


def shortlist_softmax(scores) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise errors.NonFiniteScore("softmax of non-finite scores")
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_arrays(data):
    if isinstance(data, PreparedBatch):
        return data.shortlist, data.base_scores, data.true_position, data.features
    data = list(data)
    if not data:
        raise errors.EmptyCalibration("no examples")
    return (np.stack([e.shortlist for e in data]), np.stack([e.base_scores for e in data]),
            np.array([e.true_position for e in data]), np.stack([e.rival_means for e in data]))


def _nll_and_grad(a, theta, shortlist, base, pos, feats, lambda_a, lambda_theta):
    n = shortlist.shape[0]
    r = base + a[shortlist] + feats @ theta
    lse = logsumexp(r, axis=1)
    rows = np.arange(n)
    nll = float(np.sum(lse - r[rows, pos]))
    resid = np.exp(r - lse[:, None])
    resid[rows, pos] -= 1.0
    grad_a = np.bincount(shortlist.ravel(), weights=resid.ravel(), minlength=a.shape[0])
    grad_theta = np.einsum("nk,nkd->d", resid, feats)
    value = nll + lambda_a * float(a @ a) + lambda_theta * float(theta @ theta)
    return value, grad_a + 2 * lambda_a * a, grad_theta + 2 * lambda_theta * theta


def _hessian(a, theta, shortlist, base, pos, feats, lambda_a, lambda_theta):
    """Exact Hessian of the negated objective, laid out as ``(a, theta)``."""
    K, d = a.shape[0], theta.shape[0]
    r = base + a[shortlist] + feats @ theta
    p = np.exp(r - logsumexp(r, axis=1, keepdims=True))
    # per-example softmax curvature diag(p) - p p^T
    w = -p[:, :, None] * p[:, None, :]
    k = p.shape[1]
    w[:, np.arange(k), np.arange(k)] += p
    idx = (shortlist[:, :, None] * K + shortlist[:, None, :]).ravel()
    h_aa = np.bincount(idx, weights=w.ravel(), minlength=K * K).reshape(K, K)
    wf = np.einsum("nyz,nzd->nyd", w, feats)
    h_at = np.stack([np.bincount(shortlist.ravel(), weights=wf[:, :, c].ravel(), minlength=K)
                     for c in range(d)], axis=1) if d else np.zeros((K, 0))
    h_tt = np.einsum("nyd,nye->de", feats, wf)
    h = np.block([[h_aa, h_at], [h_at.T, h_tt]])
    h[np.arange(K), np.arange(K)] += 2 * lambda_a
    h[K + np.arange(d), K + np.arange(d)] += 2 * lambda_theta
    return h


def objective(params: ModelParams, data) -> tuple:
    """Negated penalised log-likelihood and its gradient w.r.t. ``(a, theta)``.

    Returns ``(value, gradient)`` with the gradient laid out as ``a`` (length
    K) followed by ``theta`` (length d).
    """
    shortlist, base, pos, feats = _as_arrays(data)
    if np.any(pos < 0):
        raise errors.UncoveredExample("objective requires covered examples")
    if params.d != feats.shape[2] or shortlist.max() >= params.K:
        raise errors.DimensionMismatch("params do not match the prepared data")
    value, ga, gt = _nll_and_grad(params.a, params.theta, shortlist, base, pos, feats,
                                  params.lambda_a, params.lambda_theta)
    return value, np.concatenate([ga, gt])


NEWTON_MAX_PARAMS = 3000


def _newton_polish(fun, hess, x, value, grad, tol, max_steps=20):
    """Finish a near-converged convex fit with damped Newton steps.

    L-BFGS stalls once objective differences fall below floating-point
    resolution of the summed likelihood; Newton steps are accepted on
    gradient-norm decrease instead, which remains informative there.
    """
    g_norm = np.linalg.norm(grad)
    steps = 0
    while g_norm > tol and steps < max_steps:
        h = hess(x)
        try:
            step = np.linalg.solve(h, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-4:
            x_new = x - t * step
            v_new, g_new = fun(x_new)
            if np.linalg.norm(g_new) < g_norm or v_new < value - 1e-12 * abs(value):
                break
            t *= 0.5
        else:
            break
        x, value, grad = x_new, v_new, g_new
        g_norm = np.linalg.norm(grad)
        steps += 1
    return x, value, grad, steps


def fit(calib, lambda_a: float = 1e-3, lambda_theta: float = 1e-3,
        init: ModelParams | None = None, opt: OptimizerConfig = OptimizerConfig(),
        freeze: str | None = None, K: int | None = None) -> ModelParams:
    """Jointly fit classwise offsets and pairwise weights.

    ``calib`` is a :class:`PreparedBatch` or a list of
    :class:`PreparedExample` (then ``K`` defaults to the largest class id
    seen plus one and no feature transform is recorded).

    Minimises the negated penalised conditional log-likelihood with L-BFGS.
    ``freeze`` pins one block at zero, excluding it from both optimisation and
    penalty: ``"theta"`` gives the classwise-only model, ``"a"`` the
    pairwise-only one.
    """
    if freeze not in (None, "a", "theta"):
        raise ValueError(f"unknown block to freeze: {freeze!r}")
    if isinstance(calib, PreparedBatch):
        if len(calib) == 0:
            raise errors.EmptyCalibration("no covered calibration examples")
        args = (calib.shortlist, calib.base_scores, calib.true_position, calib.features)
        K = calib.K
        meta = dict(feature_layout=calib.layout, feature_mean=calib.transform.mean,
                    feature_scale=calib.transform.scale,
                    freq_smoothing=calib.cfg.freq_smoothing, fitted_on=calib.fingerprint)
    else:
        args = _as_arrays(calib)
        K = int(args[0].max()) + 1 if K is None else K
        meta = {}
    if np.any(args[2] < 0):
        raise errors.UncoveredExample("calibration contains uncovered examples")
    d = args[3].shape[2]
    a0 = np.zeros(K) if init is None else np.array(init.a, dtype=float)
    t0 = np.zeros(d) if init is None else np.array(init.theta, dtype=float)
    fit_a, fit_theta = freeze != "a", freeze != "theta"
    if not fit_a:
        a0[:] = 0.0
    if not fit_theta:
        t0[:] = 0.0
    la = lambda_a if fit_a else 0.0
    lt = lambda_theta if fit_theta else 0.0

    def unpack(x):
        a = x[:K] if fit_a else a0
        theta = x[K if fit_a else 0:] if fit_theta else t0
        return a, theta

    def fun(x):
        a, theta = unpack(x)
        value, ga, gt = _nll_and_grad(a, theta, *args, la, lt)
        if not math.isfinite(value):
            raise errors.OptimizerDiverged("non-finite objective during fit")
        parts = ([ga] if fit_a else []) + ([gt] if fit_theta else [])
        return value, np.concatenate(parts)

    def hess(x):
        a, theta = unpack(x)
        h = _hessian(a, theta, *args, la, lt)
        keep = np.concatenate([np.full(K, fit_a), np.full(d, fit_theta)])
        return h[np.ix_(keep, keep)]

    x0 = np.concatenate(([a0] if fit_a else []) + ([t0] if fit_theta else []))
    n_free = max(1, x0.size)
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": opt.max_iter, "maxcor": opt.memory,
                            "gtol": opt.tol / math.sqrt(n_free), "ftol": 0.0,
                            "maxls": 50})
    x, n_newton = res.x, 0
    value, grad = fun(x)
    if np.linalg.norm(grad) > opt.tol and n_free <= NEWTON_MAX_PARAMS:
        x, value, grad, n_newton = _newton_polish(fun, hess, x, value, grad, opt.tol)
    a, theta = unpack(x)
    grad_norm = float(np.linalg.norm(grad))
    info = {"objective": value, "nll": value - la * float(a @ a) - lt * float(theta @ theta),
            "n_iter": int(res.nit), "n_newton": n_newton, "grad_norm": grad_norm,
            "converged": grad_norm <= opt.tol, "message": str(res.message),
            "freeze": freeze or "none", "n_examples": len(calib)}
    return ModelParams(a=a, theta=theta, lambda_a=la, lambda_theta=lt, fit_info=info, **meta)


def feature_config_of(params: ModelParams) -> FeatureConfig:
    from .features import SIMILARITY
    return FeatureConfig(use_similarity=SIMILARITY in params.feature_layout,
                         freq_smoothing=params.freq_smoothing)


class ModelScorer:
    """Scores shortlists with fitted parameters, reusing their stored z-scoring."""

    def __init__(self, params: ModelParams, stats: ClassStats, sim: Similarity | None = None):
        if params.K != stats.K:
            raise errors.DimensionMismatch("model and class stats disagree on K")
        self.params = params
        self.stats = stats
        self.sim = sim
        self.cfg = feature_config_of(params)

    def __call__(self, batch: ShortlistBatch) -> np.ndarray:
        if len(batch) == 0:
            return np.zeros(batch.shortlist.shape)
        prepared = PreparedBatch(batch, self.stats, self.sim, self.cfg,
                                 transform_of(self.params))
        return rerank_scores(prepared, self.params)
