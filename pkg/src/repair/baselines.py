"""Fixed-offset baselines and component ablations on shared shortlists.

Every scorer here maps a :class:`~repair.types.ShortlistBatch` to an
``(n, k)`` array of scores aligned with the shortlist, so all methods are
evaluated on exactly the same shortlists.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import errors
from .model import OptimizerConfig, PreparedBatch, fit
from .types import ClassStats, Dataset, ShortlistBatch, ShortlistContext

TAU_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
LOGIT_ADJUST = "logit_adjust"
TAU_NORM = "tau_norm"


def _log_priors(stats: ClassStats, classes) -> np.ndarray:
    pi = stats.priors[np.asarray(classes)]
    if np.any(pi <= 0):
        raise errors.ZeroPrior("logit adjustment needs positive priors on the shortlist")
    return np.log(pi)


def logit_adjust(ctx: ShortlistContext, stats: ClassStats, tau: float) -> np.ndarray:
    """``g_y - tau * log(pi_y)`` for each shortlisted class."""
    return ctx.base_scores - tau * _log_priors(stats, ctx.shortlist)


def _norm_powers(stats: ClassStats, classes, tau: float) -> np.ndarray:
    if stats.weight_norms is None:
        raise errors.MissingWeightNorms("tau-norm needs classifier weight norms")
    norms = stats.weight_norms[np.asarray(classes)]
    if np.any(norms <= 0):
        raise errors.NonPositiveNorm("classifier weight norms must be positive")
    return norms ** tau


def tau_norm(ctx: ShortlistContext, stats: ClassStats, tau: float) -> np.ndarray:
    """``g_y / ||w_y||**tau`` for each shortlisted class."""
    return ctx.base_scores / _norm_powers(stats, ctx.shortlist, tau)


def base_scorer(batch: ShortlistBatch) -> np.ndarray:
    return np.asarray(batch.base_scores)


class LogitAdjScorer:
    def __init__(self, stats: ClassStats, tau: float):
        self.stats = stats
        self.tau = float(tau)

    def __call__(self, batch: ShortlistBatch) -> np.ndarray:
        if len(batch) == 0:
            return np.zeros(batch.shortlist.shape)
        return batch.base_scores - self.tau * _log_priors(self.stats, batch.shortlist)


class TauNormScorer:
    def __init__(self, stats: ClassStats, tau: float):
        self.stats = stats
        self.tau = float(tau)

    def __call__(self, batch: ShortlistBatch) -> np.ndarray:
        if len(batch) == 0:
            return np.zeros(batch.shortlist.shape)
        return batch.base_scores / _norm_powers(self.stats, batch.shortlist, self.tau)


SCORERS = {LOGIT_ADJUST: LogitAdjScorer, TAU_NORM: TauNormScorer}


def _covered_hit1(batch: ShortlistBatch, scores: np.ndarray) -> int:
    # local import keeps metrics free of a dependency on this module
    from .metrics import truth_ranks
    return int(np.sum(truth_ranks(scores, batch.true_position, batch.shortlist) == 1))


def tune_tau(calib, method: str = LOGIT_ADJUST, grid=TAU_GRID, k: int | None = None,
             stats: ClassStats | None = None) -> float:
    """Grid value of ``tau`` maximising covered calibration Hit@1.

    ``calib`` is a :class:`Dataset` (then ``k`` is required) or a prepared
    :class:`ShortlistBatch`. Ties go to the smallest ``tau``.
    """
    grid = list(grid)
    if not grid:
        raise errors.EmptyGrid("tau grid is empty")
    if method not in SCORERS:
        raise ValueError(f"unknown method {method!r}")
    if isinstance(calib, Dataset):
        if k is None:
            raise ValueError("k is required when tuning on a Dataset")
        from .shortlist import build_shortlists
        stats = stats or calib.stats
        batch = build_shortlists(calib, k)
    else:
        batch = ShortlistBatch.from_contexts(calib)
        if stats is None:
            raise ValueError("stats are required when tuning on shortlists")
    batch = batch.covered_only()
    best_tau, best_hits = None, -1
    for tau in sorted(grid):
        hits = _covered_hit1(batch, SCORERS[method](stats, tau)(batch))
        if hits > best_hits:
            best_tau, best_hits = tau, hits
    return float(best_tau)


def tau_norm_available(stats: ClassStats) -> bool:
    """True when weight norms exist; otherwise warn that tau-norm is skipped."""
    if stats.weight_norms is None:
        warnings.warn("tau-norm skipped: class stats carry no weight norms", stacklevel=2)
        return False
    return True


ABLATIONS = {"cw_only": "theta", "pw_only": "a"}


def ablation_fit(calib: PreparedBatch, mode: str, lambda_a: float = 1e-3,
                 lambda_theta: float = 1e-3, opt: OptimizerConfig = OptimizerConfig()):
    """Fit with one block pinned at zero.

    ``"cw_only"`` fixes ``theta = 0`` (classwise offsets only) and
    ``"pw_only"`` fixes ``a = 0`` (pairwise correction only).
    """
    mode = mode.replace("-", "_")
    if mode not in ABLATIONS:
        raise ValueError(f"ablation mode must be one of {sorted(ABLATIONS)}")
    return fit(calib, lambda_a, lambda_theta, opt=opt, freeze=ABLATIONS[mode])
