"""Threshold dispersion, quintile stratification, crossing witnesses and
Bayes oracles for synthetic data."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr
from scipy.special import logsumexp

from . import errors
from .types import ShortlistBatch, ShortlistContext

N_QUINTILES = 5


def threshold(ctx: ShortlistContext, u: int, v: int) -> float:
    """Base-score margin ``g_v - g_u`` that ``a_u - a_v`` must exceed to put u above v."""
    return ctx.score(v) - ctx.score(u)


def _pair_thresholds(batch: ShortlistBatch):
    """Flattened ``(y, j, t(x; y, j))`` over all ordered shortlist pairs."""
    n, k = batch.shortlist.shape
    off = ~np.eye(k, dtype=bool)
    y = np.broadcast_to(batch.shortlist[:, :, None], (n, k, k))[:, off]
    j = np.broadcast_to(batch.shortlist[:, None, :], (n, k, k))[:, off]
    g = batch.base_scores
    t = (g[:, None, :] - g[:, :, None])[:, off]
    rows = np.broadcast_to(np.arange(n)[:, None], y.shape)
    return y.ravel(), j.ravel(), t.ravel(), rows.ravel()


def _grouped_std(keys, values):
    """Population std per unique key (two-pass), with group sizes."""
    uniq, inv = np.unique(keys, return_inverse=True)
    count = np.bincount(inv)
    mean = np.bincount(inv, weights=values) / count
    ss = np.bincount(inv, weights=np.square(values - mean[inv]))
    return uniq, count, np.sqrt(ss / count)


def class_dispersions(contexts, K: int) -> np.ndarray:
    """Threshold dispersion ``D_y`` for every class over covered contexts.

    ``D_y`` is the largest population std of ``t(x; y, j)`` among rivals ``j``
    that share at least two covered shortlists with ``y``. Classes without
    such a rival get NaN.
    """
    batch = ShortlistBatch.from_contexts(contexts).covered_only()
    out = np.full(K, np.nan)
    if len(batch) == 0 or batch.k < 2:
        return out
    y, j, t, _ = _pair_thresholds(batch)
    uniq, count, std = _grouped_std(y * K + j, t)
    ok = count >= 2
    cls = uniq[ok] // K
    best = np.full(K, -np.inf)
    np.maximum.at(best, cls, std[ok])
    seen = np.isfinite(best)
    out[seen] = best[seen]
    return out


def dispersion(contexts, y: int) -> float:
    """``D_y`` for one class; needs ``y`` in at least two covered shortlists."""
    batch = ShortlistBatch.from_contexts(contexts).covered_only()
    rows = np.flatnonzero((batch.shortlist == y).any(axis=1)) if len(batch) else np.zeros(0, int)
    if rows.size < 2:
        raise errors.InsufficientContexts(f"class {y} appears in {rows.size} covered shortlists")
    K = int(max(batch.shortlist.max(), y)) + 1
    d = class_dispersions(batch.subset(rows), K)[y]
    if np.isnan(d):
        raise errors.InsufficientContexts(f"no rival of class {y} co-occurs twice")
    return float(d)


@dataclass(frozen=True)
class QuintileResult:
    gains: np.ndarray  # (5,) pooled Delta Hit@1 per bin, lowest dispersion first
    classes: np.ndarray  # eligible classes in ascending dispersion order
    bins: np.ndarray  # bin index of each entry of ``classes``
    class_gain: np.ndarray  # per-class Delta Hit@1 of each entry of ``classes``
    dispersion: np.ndarray  # D_y of each entry of ``classes``


def quintile_gains(rare_classes, dispersions, hits_method, hits_classwise, totals,
                   n_bins: int = N_QUINTILES) -> QuintileResult:
    """Pooled Hit@1 gain of a method over the classwise model per dispersion bin.

    Eligible classes are rare, have a defined dispersion and at least one
    covered test example. They are sorted by ascending ``D_y`` (ties by class
    id) and split into ``n_bins`` bins, remainder classes going to the lower
    bins. The gain of a bin is computed over the pooled covered test examples
    of its classes.
    """
    rare = np.asarray(rare_classes)
    if rare.dtype == bool:
        rare = np.flatnonzero(rare)
    disp = np.asarray(dispersions, dtype=float)
    hm = np.asarray(hits_method)
    hc = np.asarray(hits_classwise)
    tot = np.asarray(totals)
    elig = rare[np.isfinite(disp[rare]) & (tot[rare] > 0)]
    if elig.size < n_bins:
        raise errors.TooFewClasses(f"{elig.size} eligible rare classes < {n_bins} bins")
    elig = elig[np.lexsort((elig, disp[elig]))]
    gains = np.empty(n_bins)
    bins = np.empty(elig.size, dtype=np.int64)
    start = 0
    for b, members in enumerate(np.array_split(elig, n_bins)):
        bins[start:start + members.size] = b
        start += members.size
        gains[b] = (hm[members].sum() - hc[members].sum()) / tot[members].sum()
    class_gain = (hm[elig] - hc[elig]) / tot[elig]
    return QuintileResult(gains, elig, bins, class_gain, disp[elig])


def write_quintile_csv(result: QuintileResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "mean_D", "bin", "delta_hit1"])
        for c, d, b, g in zip(result.classes, result.dispersion, result.bins, result.class_gain):
            w.writerow([int(c), repr(float(d)), int(b) + 1, repr(float(g))])


@dataclass(frozen=True)
class Witness:
    """Two contexts whose preferred orderings of ``(u, v)`` no offset can satisfy."""

    u: int
    v: int
    ctx_u: ShortlistContext  # truth prefers u here
    ctx_v: ShortlistContext  # truth prefers v here
    t_u: float
    t_v: float


def label_truth(batch: ShortlistBatch) -> np.ndarray:
    """Truth scores from labels: 1 at the true label's position, 0 elsewhere."""
    return (batch.shortlist == batch.labels[:, None]).astype(float)


def _witness_tables(batch: ShortlistBatch, truth, K: int, pairs=None):
    """Per unordered pair: the worst u-preferring and v-preferring thresholds."""
    y, j, t, rows = _pair_thresholds(batch)
    n, k = batch.shortlist.shape
    off = ~np.eye(k, dtype=bool)
    truth = np.asarray(truth, dtype=float)
    pref = np.sign(truth[:, :, None] - truth[:, None, :])[:, off].ravel()
    keep = (y < j) & (pref != 0)
    if pairs is not None:
        wanted = np.array([min(u, v) * K + max(u, v) for u, v in pairs], dtype=np.int64)
        keep &= np.isin(y * K + j, wanted)
    y, j, t, rows, pref = y[keep], j[keep], t[keep], rows[keep], pref[keep]
    return y * K + j, t, rows, pref


def scan_witnesses(contexts, truth=None, K: int | None = None, pairs=None) -> list:
    """All pairs ``(u, v)`` with a threshold crossing, one witness per pair.

    ``truth`` is an ``(n, k)`` array of ground-truth scores aligned with the
    shortlists (exact log posterior on synthetic data); by default it comes
    from labels. ``pairs`` restricts the scan; each pair is reported with
    the caller's orientation, otherwise with ``u < v``.
    """
    batch = ShortlistBatch.from_contexts(contexts)
    if len(batch) == 0 or batch.k < 2:
        return []
    truth = label_truth(batch) if truth is None else truth
    K = int(batch.shortlist.max()) + 1 if K is None else K
    if pairs is not None:
        K = max(K, max(max(p) for p in pairs) + 1) if pairs else K
    keys, t, rows, pref = _witness_tables(batch, truth, K, pairs)
    orient = {(min(u, v), max(u, v)): (u, v) for u, v in (pairs or [])}
    order = np.argsort(keys, kind="stable")
    keys, t, rows, pref = keys[order], t[order], rows[order], pref[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    out = []
    for sel in np.split(np.arange(keys.size), starts[1:]):
        if sel.size < 2:
            continue
        lo, hi = divmod(int(keys[sel[0]]), K)
        tk, rk, pk = t[sel], rows[sel], pref[sel]
        # tk holds t(x; lo, hi); truth prefers lo where pk > 0
        a, b = pk > 0, pk < 0
        if not (a.any() and b.any()):
            continue
        ia = np.flatnonzero(a)[np.argmax(tk[a])]
        ib = np.flatnonzero(b)[np.argmin(tk[b])]
        if tk[ia] < tk[ib]:
            continue
        if orient.get((lo, hi), (lo, hi))[0] == lo:
            out.append(Witness(lo, hi, batch[int(rk[ia])], batch[int(rk[ib])],
                               float(tk[ia]), float(tk[ib])))
        else:
            # t(x; hi, lo) = -t(x; lo, hi)
            out.append(Witness(hi, lo, batch[int(rk[ib])], batch[int(rk[ia])],
                               float(-tk[ib]), float(-tk[ia])))
    return out


def contradictory_pair_witness(contexts, u: int, v: int, truth=None) -> Witness | None:
    """A context pair where truth prefers ``u`` in one and ``v`` in the other
    while ``t(x; u, v) >= t(x'; u, v)``, or None when no such pair exists."""
    found = scan_witnesses(contexts, truth, pairs=[(u, v)])
    return found[0] if found else None


def offset_scan(t_u: float, t_v: float, lo: float = -50.0, hi: float = 50.0,
                step: float = 1e-3) -> np.ndarray:
    """Offset differences ``a_u - a_v`` on a grid that satisfy both orderings.

    Putting u above v in the first context needs ``a_u - a_v > t_u``; putting
    v above u in the second needs ``a_u - a_v < t_v``.
    """
    n = int(round((hi - lo) / step))
    grid = lo + step * np.arange(n + 1)
    return grid[(grid > t_u) & (grid < t_v)]


def _synthetic_inputs(synth, example_ids):
    if not hasattr(synth, "log_posterior") or getattr(synth, "inputs", None) is None:
        raise errors.NoGenerativeTruth("dataset carries no generative parameters")
    return synth.inputs_for(example_ids)


def restricted_log_posterior(synth, contexts) -> np.ndarray:
    """``s*_y = log P(y | x) - log alpha(x)`` on each shortlist, shape ``(n, k)``."""
    batch = ShortlistBatch.from_contexts(contexts)
    if len(batch) == 0:
        return np.zeros(batch.shortlist.shape)
    x = _synthetic_inputs(synth, batch.example_ids)
    logpost = synth.log_posterior(x)
    lp = np.take_along_axis(logpost, batch.shortlist, axis=1)
    return lp - logsumexp(lp, axis=1, keepdims=True)


def oracle_residuals(synth, contexts) -> np.ndarray:
    """``beta*_y = s*_y - g_y`` for every context, shape ``(n, k)``."""
    batch = ShortlistBatch.from_contexts(contexts)
    return restricted_log_posterior(synth, batch) - batch.base_scores


def oracle_residual(synth, ctx: ShortlistContext) -> np.ndarray:
    """``beta*_y`` for the classes of one shortlist, in shortlist order."""
    return oracle_residuals(synth, [ctx])[0]


def pairwise_gap(synth, ctx: ShortlistContext, u: int, v: int) -> float:
    """``Delta_uv = (s*_u - s*_v) - (g_u - g_v)``."""
    s = restricted_log_posterior(synth, [ctx])[0]
    p, q = ctx.position(u), ctx.position(v)
    return float((s[p] - s[q]) - (ctx.base_scores[p] - ctx.base_scores[q]))


class BayesScorer:
    """Scores shortlists by the exact restricted log posterior."""

    def __init__(self, synth):
        self.synth = synth

    def __call__(self, batch: ShortlistBatch) -> np.ndarray:
        return restricted_log_posterior(self.synth, batch)


@dataclass(frozen=True)
class OffsetFit:
    a: np.ndarray
    residual_std: float
    n_iter: int


def fit_offsets_from_gaps(residuals, contexts, K: int) -> OffsetFit:
    """Least-squares fixed offsets explaining oracle pairwise gaps.

    Solves ``min_a sum_x sum_{y in S} (beta~_{x,y} - (a_y - mean_S a))^2``,
    i.e. regresses within-shortlist centred residuals on class indicators,
    which fits every gap ``beta*_u - beta*_v`` by ``a_u - a_v``. The minimum
    norm solution is returned.
    """
    batch = ShortlistBatch.from_contexts(contexts)
    beta = np.asarray(residuals, dtype=float)
    n, k = batch.shortlist.shape
    target = (beta - beta.mean(axis=1, keepdims=True)).ravel()
    rows = np.repeat(np.arange(n * k), k + 1)
    own = batch.shortlist.reshape(-1, 1)
    shared = np.repeat(batch.shortlist, k, axis=0)
    cols = np.hstack([own, shared]).ravel()
    vals = np.tile(np.r_[1.0, np.full(k, -1.0 / k)], n * k)
    X = sp.csr_matrix((vals, (rows, cols)), shape=(n * k, K))
    sol = lsqr(X, target, atol=1e-14, btol=1e-14, iter_lim=20 * K)
    a = sol[0]
    resid = target - X @ a
    return OffsetFit(a, float(np.sqrt(np.mean(resid ** 2))), int(sol[2]))


def orderings_agree(scores_a, scores_b) -> np.ndarray:
    """Per-row equality of the full orderings induced by two score arrays."""
    oa = np.argsort(-np.asarray(scores_a), axis=1, kind="stable")
    ob = np.argsort(-np.asarray(scores_b), axis=1, kind="stable")
    return np.all(oa == ob, axis=1)
