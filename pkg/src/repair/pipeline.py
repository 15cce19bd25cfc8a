"""End-to-end experiment runners built from the library pieces.

A run fits every method on the covered calibration shortlists and
evaluates all of them on the same test shortlists.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .baselines import TAU_GRID, LogitAdjScorer, TauNormScorer, base_scorer, tune_tau
from .diagnostics import class_dispersions, quintile_gains
from .features import FeatureConfig
from .metrics import evaluate, per_class_hits
from .model import ModelScorer, OptimizerConfig, fit, prepare
from .shortlist import build_shortlists
from .shrinkage import ShrinkageGroups, covered_label_counts, shrink_params
from .synth import CLASS_SEPARABLE, NON_CLASS_SEPARABLE, SyntheticSpec, generate
from .types import Dataset, EvalReport, ModelParams

BASE = "Base"
LOGIT_ADJ = "LogitAdj"
TAU_NORM = "tau-norm"
CLASSWISE = "Classwise"
REPAIR = "REPAIR"
PW_ONLY = "PW-only"
METHODS = (BASE, LOGIT_ADJ, TAU_NORM, CLASSWISE, REPAIR, PW_ONLY)
FREEZE = {CLASSWISE: "theta", REPAIR: None, PW_ONLY: "a"}

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
K_VALUES = (5, 10, 20, 50)
LAMBDA_A_GRID = (0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5)
LAMBDA_THETA_GRID = (5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2)


@dataclass(frozen=True)
class RunConfig:
    k: int = 10
    lambda_a: float = 1e-3
    lambda_theta: float = 1e-3
    use_similarity: bool = True
    freq_smoothing: float = 1.0
    shrinkage_groups: int = 1
    shrink: bool = True
    tau_grid: tuple = TAU_GRID
    max_iter: int = 300
    tol: float = 1e-8
    memory: int = 10
    # listed with the per-dataset hyperparameters but never defined; carried, unused
    alpha: float | None = None

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(self.max_iter, self.tol, self.memory)

    def features_for(self, data: Dataset) -> FeatureConfig:
        return FeatureConfig(use_similarity=self.use_similarity and data.similarity is not None,
                             freq_smoothing=self.freq_smoothing)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in values.items() if k in names and v is not None}
        if "tau_grid" in kwargs and not isinstance(kwargs["tau_grid"], tuple):
            kwargs["tau_grid"] = tuple(kwargs["tau_grid"])
        return cls(**kwargs)


def train(calib: Dataset, cfg: RunConfig = RunConfig(), freeze: str | None = None,
          calib_batch=None) -> ModelParams:
    """Fit on covered calibration shortlists, then shrink the offsets."""
    batch = calib_batch if calib_batch is not None else build_shortlists(calib, cfg.k)
    covered = batch.covered_only()
    if len(covered) == 0:
        raise errors.EmptyCalibration(f"no calibration example is covered at k={cfg.k}")
    prepared = prepare(covered, calib.stats, calib.similarity, cfg.features_for(calib),
                       fingerprint=calib.fingerprint())
    params = fit(prepared, cfg.lambda_a, cfg.lambda_theta, opt=cfg.optimizer, freeze=freeze)
    if cfg.shrink and freeze != "a":
        groups = (ShrinkageGroups.single(calib.K) if cfg.shrinkage_groups == 1 else
                  ShrinkageGroups.by_frequency(calib.stats.counts, cfg.shrinkage_groups))
        params = shrink_params(params, covered_label_counts(covered.labels, calib.K), groups)
    return params


@dataclass
class MethodRun:
    """Reports, fitted models and tuned tau values of one calibration/test pair."""

    reports: dict
    models: dict
    taus: dict
    test_batch: object
    scorers: dict
    config: dict = field(default_factory=dict)

    def hit1(self, method: str) -> float:
        return self.reports[method].hit1


def run_methods(calib: Dataset, test: Dataset, cfg: RunConfig = RunConfig(),
                methods=METHODS, per_class: bool = False) -> MethodRun:
    stats = calib.stats
    calib_batch = build_shortlists(calib, cfg.k)
    test_batch = build_shortlists(test, cfg.k)
    scorers, models, taus = {}, {}, {}
    for m in methods:
        if m == BASE:
            scorers[m] = base_scorer
        elif m == LOGIT_ADJ:
            taus[m] = tune_tau(calib_batch, "logit_adjust", cfg.tau_grid, stats=stats)
            scorers[m] = LogitAdjScorer(stats, taus[m])
        elif m == TAU_NORM:
            if stats.weight_norms is None:
                continue
            taus[m] = tune_tau(calib_batch, "tau_norm", cfg.tau_grid, stats=stats)
            scorers[m] = TauNormScorer(stats, taus[m])
        elif m in FREEZE:
            models[m] = train(calib, cfg, FREEZE[m], calib_batch)
            scorers[m] = ModelScorer(models[m], stats, calib.similarity)
        else:
            raise ValueError(f"unknown method {m!r}")
    disp = class_dispersions(test_batch, stats.K) if per_class else None
    reports = {m: evaluate(test_batch, s, stats, base_scorer, per_class, disp)
               for m, s in scorers.items()}
    return MethodRun(reports, models, taus, test_batch, scorers, cfg.to_dict())


# --- synthetic benchmark -------------------------------------------------------------

TARGET_HIT1 = {
    CLASS_SEPARABLE: {BASE: (52.6, 45.8, 42.6, 41.2), CLASSWISE: (63.0, 54.8, 50.3, 48.1),
                      REPAIR: (63.0, 54.8, 50.3, 48.1)},
    NON_CLASS_SEPARABLE: {BASE: (59.0, 52.6, 49.6, 48.4), CLASSWISE: (68.1, 61.1, 57.2, 55.2),
                          REPAIR: (79.5, 72.5, 68.3, 66.1)},
}
HIT1_TOL = 1.5
TARGET_RHO = {CLASS_SEPARABLE: {CLASSWISE: (0.17, 0.03), REPAIR: (0.17, 0.03)},
             NON_CLASS_SEPARABLE: {CLASSWISE: (0.18, 0.03), REPAIR: (0.42, 0.04)}}
TARGET_ABLATION = {CLASSWISE: 61.1, PW_ONLY: 72.1, REPAIR: 72.5}
TARGET_QUINTILES = {"q1": (0.06, 0.05), "q5": (0.30, 0.07), "flat_max_spread": 0.05}


@dataclass
class SeedResult:
    regime: str
    seed: int
    hit1: dict  # {k: {method: hit1}}
    rho: dict  # {k: {method: rho_k}}
    quintiles: list | None  # 5 gains of REPAIR over Classwise at the quintile k
    n_quintile_classes: int
    fit_info: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_synthetic_seed(regime: str, seed: int, k_values=K_VALUES,
                       cfg: RunConfig = RunConfig(), spec_overrides: dict | None = None,
                       methods=(BASE, CLASSWISE, REPAIR, PW_ONLY), quintile_k: int | None = 10,
                       ) -> SeedResult:
    """All methods on one synthetic dataset for each shortlist size."""
    spec = SyntheticSpec.for_regime(regime, seed=seed, **(spec_overrides or {}))
    ds = generate(spec)
    hit1, rho, info = {}, {}, {}
    quint, n_q = None, 0
    for k in k_values:
        run = run_methods(ds.calib, ds.test, cfg.replace(k=k), methods)
        hit1[k] = {m: r.hit1 for m, r in run.reports.items()}
        rho[k] = {m: r.rho_k for m, r in run.reports.items()}
        info[k] = {m: {key: p.fit_info[key] for key in ("grad_norm", "n_iter", "converged")}
                   for m, p in run.models.items()}
        if k == quintile_k and CLASSWISE in run.scorers and REPAIR in run.scorers:
            q = quintile_table(run, ds.test.stats)
            quint, n_q = q.gains.tolist(), int(q.classes.size)
    return SeedResult(regime, seed, hit1, rho, quint, n_q, info)


def quintile_table(run: MethodRun, stats, method: str = REPAIR, reference: str = CLASSWISE):
    """Dispersion quintiles of the gain of ``method`` over ``reference`` on rare classes."""
    batch = run.test_batch
    disp = class_dispersions(batch, stats.K)
    hm, tot = per_class_hits(batch, run.scorers[method], stats.K)
    hc, _ = per_class_hits(batch, run.scorers[reference], stats.K)
    return quintile_gains(stats.rare_mask, disp, hm, hc, tot)


def _seed_job(args):
    return run_synthetic_seed(*args)


def run_seeds(regime: str, seeds=DEFAULT_SEEDS, k_values=K_VALUES, cfg: RunConfig = RunConfig(),
              spec_overrides: dict | None = None, methods=(BASE, CLASSWISE, REPAIR, PW_ONLY),
              quintile_k: int | None = 10, n_jobs: int = 1) -> list:
    """Run seeds, optionally in worker processes; results come back in seed order."""
    jobs = [(regime, s, tuple(k_values), cfg, spec_overrides, tuple(methods), quintile_k)
            for s in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            return list(pool.map(_seed_job, jobs))
    return [_seed_job(job) for job in jobs]


def aggregate(results: list) -> dict:
    """Means and population stds over seeds of Hit@1, rho_k and quintile gains."""
    out = {"hit1": {}, "rho": {}, "quintiles": None}
    for key in ("hit1", "rho"):
        for k in results[0].__dict__[key]:
            out[key][k] = {}
            for m in results[0].__dict__[key][k]:
                vals = np.array([getattr(r, key)[k][m] for r in results], dtype=float)
                out[key][k][m] = (float(vals.mean()), float(vals.std()))
    qs = [r.quintiles for r in results if r.quintiles is not None]
    if qs:
        q = np.array(qs)
        out["quintiles"] = (q.mean(axis=0).tolist(), q.std(axis=0).tolist())
    return out


def _within(value, target, tol) -> bool:
    return value is not None and abs(value - target) <= tol + 1e-12


def check_fig2(agg: dict) -> list:
    rows = []
    for regime, targets in TARGET_RHO.items():
        for m, (target, tol) in targets.items():
            mean = agg[regime]["rho"][10][m][0]
            rows.append({"regime": regime, "method": m, "rho_mean": mean,
                         "rho_std": agg[regime]["rho"][10][m][1], "target": target, "tol": tol,
                         "pass": _within(mean, target, tol)})
    return rows


def check_table5(agg: dict, k_values=K_VALUES) -> list:
    rows = []
    for regime, targets in TARGET_HIT1.items():
        for m, vals in targets.items():
            for k, target in zip(K_VALUES, vals):
                if k not in k_values:
                    continue
                mean, std = agg[regime]["hit1"][k][m]
                rows.append({"regime": regime, "k": k, "method": m, "hit1_mean": 100 * mean,
                             "hit1_std": 100 * std, "target": target, "tol": HIT1_TOL,
                             "pass": _within(100 * mean, target, HIT1_TOL)})
    return rows


def check_fig3(agg: dict) -> list:
    rows = []
    ncs = agg[NON_CLASS_SEPARABLE]["quintiles"]
    cs = agg[CLASS_SEPARABLE]["quintiles"]
    if ncs is not None:
        g = ncs[0]
        rows.append({"check": "non_class_separable monotone",
                     "value": g, "pass": bool(np.all(np.diff(g) >= 0))})
        for name, idx in (("q1", 0), ("q5", 4)):
            target, tol = TARGET_QUINTILES[name]
            rows.append({"check": f"non_class_separable {name}", "value": g[idx],
                         "target": target, "tol": tol, "pass": _within(g[idx], target, tol)})
    if cs is not None:
        spread = max(cs[0]) - min(cs[0])
        rows.append({"check": "class_separable spread", "value": spread,
                     "target": 0.0, "tol": TARGET_QUINTILES["flat_max_spread"],
                     "pass": spread <= TARGET_QUINTILES["flat_max_spread"]})
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


FIGURES = ("fig2", "fig3", "table5")


def repro(figure: str, seeds=DEFAULT_SEEDS, out_dir=None, cfg: RunConfig = RunConfig(),
          spec_overrides: dict | None = None, n_jobs: int = 1) -> dict:
    """Reproduce one synthetic figure or table over several seeds.

    Returns a summary with per-regime aggregates and pass/fail rows against
    the published targets. With ``out_dir`` it also writes ``summary.json``
    and a plot-ready CSV.
    """
    if figure not in FIGURES:
        raise ValueError(f"figure must be one of {FIGURES}")
    k_values = K_VALUES if figure == "table5" else (10,)
    quintile_k = 10 if figure == "fig3" else None
    methods = (BASE, CLASSWISE, REPAIR)
    agg, raw = {}, {}
    for regime in (CLASS_SEPARABLE, NON_CLASS_SEPARABLE):
        res = run_seeds(regime, seeds, k_values, cfg, spec_overrides, methods, quintile_k,
                        n_jobs)
        agg[regime] = aggregate(res)
        raw[regime] = [r.to_dict() for r in res]
    checks = {"fig2": check_fig2, "fig3": check_fig3,
              "table5": lambda a: check_table5(a, k_values)}[figure](agg)
    summary = {"figure": figure, "seeds": list(seeds), "config": cfg.to_dict(),
               "spec_overrides": spec_overrides or {}, "aggregate": _keys_to_str(agg),
               "checks": checks, "all_pass": all(c["pass"] for c in checks),
               "per_seed": _keys_to_str(raw)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=1, default=float) + "\n")
        if figure == "fig2":
            _write_csv(out / "fig2.csv", ["regime", "method", "rho_mean", "rho_std"],
                       [(c["regime"], c["method"], c["rho_mean"], c["rho_std"]) for c in checks])
        elif figure == "table5":
            _write_csv(out / "table5.csv",
                       ["regime", "k", "method", "hit1_mean", "hit1_std", "target"],
                       [(c["regime"], c["k"], c["method"], c["hit1_mean"], c["hit1_std"],
                         c["target"]) for c in checks])
        else:
            rows = []
            for regime in agg:
                if agg[regime]["quintiles"] is not None:
                    mean, std = agg[regime]["quintiles"]
                    rows += [(regime, q + 1, mean[q], std[q]) for q in range(len(mean))]
            _write_csv(out / "fig3.csv", ["regime", "quintile", "delta_hit1_mean",
                                          "delta_hit1_std"], rows)
    return summary


def _keys_to_str(obj):
    if isinstance(obj, dict):
        return {str(k): _keys_to_str(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_keys_to_str(v) for v in obj]
    return obj


# --- calibration resubsampling and hyperparameter search -----------------------------

def subsample(d: Dataset, fraction: float, seed: int) -> Dataset:
    """Random ``fraction`` of the records of ``d`` (order preserved)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    n = len(d)
    m = max(1, int(round(fraction * n)))
    keep = np.sort(rng.choice(n, size=m, replace=False))
    return Dataset(tuple(d.records[i] for i in keep), d.stats, d.similarity, d.role)


def subsample_trials(calib: Dataset, test: Dataset, cfg: RunConfig = RunConfig(),
                     fraction: float = 0.8, trials: int = 5, seed: int = 0,
                     methods=(BASE, LOGIT_ADJ, CLASSWISE, REPAIR)) -> dict:
    """Refit on ``trials`` calibration subsamples, each with its own seed.

    Reports per-method Hit@1 mean and std plus, for each other method, the
    number of trials in which REPAIR scored strictly higher (sign-test
    bookkeeping).
    """
    per_trial = []
    for t in range(trials):
        run = run_methods(subsample(calib, fraction, seed + t), test, cfg, methods)
        per_trial.append({m: r.hit1 for m, r in run.reports.items()})
    out = {"fraction": fraction, "trials": trials, "per_trial": per_trial, "methods": {}}
    for m in per_trial[0]:
        vals = np.array([p[m] for p in per_trial])
        entry = {"hit1_mean": float(vals.mean()), "hit1_std": float(vals.std())}
        if REPAIR in per_trial[0] and m != REPAIR:
            entry["repair_wins"] = int(sum(p[REPAIR] > p[m] for p in per_trial))
        out["methods"][m] = entry
    return out


def covered_hit1(d: Dataset, params: ModelParams, k: int) -> float:
    batch = build_shortlists(d, k)
    return evaluate(batch, ModelScorer(params, d.stats, d.similarity), d.stats).hit1


def sweep(calib: Dataset, cfg: RunConfig = RunConfig(), lambda_a_grid=LAMBDA_A_GRID,
          lambda_theta_grid=LAMBDA_THETA_GRID) -> dict:
    """Grid search of the penalties by covered calibration Hit@1.

    The test split is never touched. Ties keep the earliest grid point, i.e.
    the smallest penalties. LogitAdj's tau is tuned on the same split.
    """
    rows, best = [], None
    batch = build_shortlists(calib, cfg.k)
    for la in lambda_a_grid:
        for lt in lambda_theta_grid:
            c = cfg.replace(lambda_a=la, lambda_theta=lt)
            params = train(calib, c, calib_batch=batch)
            h = evaluate(batch, ModelScorer(params, calib.stats, calib.similarity),
                         calib.stats).hit1
            rows.append({"lambda_a": la, "lambda_theta": lt, "calib_hit1": h})
            if best is None or h > best["calib_hit1"]:
                best = rows[-1]
    tau = tune_tau(batch, "logit_adjust", cfg.tau_grid, stats=calib.stats)
    return {"grid": rows, "best": best, "logit_adjust_tau": tau}


def report_dict(reports: dict) -> dict:
    return {m: r.to_dict() for m, r in reports.items()}


__all__ = ["RunConfig", "MethodRun", "SeedResult", "train", "run_methods", "run_synthetic_seed",
           "run_seeds", "aggregate", "repro", "subsample", "subsample_trials", "sweep",
           "quintile_table", "EvalReport"]
