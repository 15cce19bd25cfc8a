"""Command-line entry point: ``repair <command> [options]``.

Every command accepts ``--config FILE`` holding flat ``key=value`` lines
(keys are option names, dashes or underscores). Explicit flags override
the file, and the effective configuration is written into each output.
Exit status is 0 on success, 1 on a data or runtime error and 2 on a usage
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import errors, formats, pipeline
from .baselines import LogitAdjScorer, TauNormScorer, base_scorer, tau_norm_available, tune_tau
from .diagnostics import (class_dispersions, offset_scan, quintile_gains, restricted_log_posterior,
                          scan_witnesses, write_quintile_csv)
from .metrics import evaluate, per_class_hits
from .model import ModelScorer
from .shortlist import build_shortlists
from .synth import SyntheticSpec, attach_sidecar, generate, load_sidecar, save_sidecar
from .types import Dataset

CALIB_FILE = "calib.scores"
TEST_FILE = "test.scores"
STATS_FILE = "class_stats.csv"
SIM_FILE = "similarity.csv"
SIDECAR_FILE = "oracle.npz"

SPEC_FLAGS = {"K": int, "dim": int, "n_train": int, "n_test": int, "n_calib": int,
              "mean_scale": float, "noise_var": float, "bias_tau": float,
              "corruption_c": float, "n_confusers": int, "delta": float, "perturb_k": int,
              "tail_fraction": float, "head_fraction": float}


def _int_list(text: str) -> list:
    """``"5,10,20"`` or an inclusive range ``"0..4"``."""
    text = str(text)
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, default=lambda o: o.tolist() if hasattr(o, "tolist") else
                      str(o))


# --- data loading --------------------------------------------------------------------

def _sibling(path, name):
    p = Path(path).with_name(name)
    return p if p.exists() else None


def _load(scores_path, args, role: str) -> Dataset:
    stats_path = args.class_stats or _sibling(scores_path, STATS_FILE)
    if stats_path is None:
        raise errors.ValidationError(f"no class stats given and no {STATS_FILE} next to "
                                     f"{scores_path}")
    stats = formats.read_class_stats(stats_path)
    sim = None
    if getattr(args, "features", "auto") != "base":
        sim_path = args.similarity or _sibling(scores_path, SIM_FILE)
        if sim_path is not None:
            sim = formats.read_similarity(sim_path, stats.K)
        elif getattr(args, "features", "auto") == "similarity":
            raise errors.SimilarityRequired("--features similarity needs a similarity file")
    return formats.load_dataset(scores_path, stats, sim, role)


def _run_config(args) -> pipeline.RunConfig:
    values = {key: getattr(args, key, None) for key in
              ("k", "lambda_a", "lambda_theta", "shrinkage_groups", "freq_smoothing", "alpha")}
    values["shrink"] = not getattr(args, "no_shrink", False)
    values["use_similarity"] = getattr(args, "features", "auto") != "base"
    return pipeline.RunConfig.from_mapping(values)


def _effective(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


# --- commands ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    overrides = {k: getattr(args, k) for k in SPEC_FLAGS if getattr(args, k) is not None}
    spec = SyntheticSpec.for_regime(args.regime, seed=args.seed, **overrides)
    ds = generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_dataset(ds.calib, out / CALIB_FILE)
    formats.write_dataset(ds.test, out / TEST_FILE)
    formats.write_class_stats(ds.calib.stats, out / STATS_FILE)
    formats.write_similarity(ds.calib.similarity, out / SIM_FILE)
    save_sidecar(ds, out / SIDECAR_FILE)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(ds.calib)} calibration and {len(ds.test)} test records to {out}")
    return 0


def cmd_fit(args) -> int:
    calib = _load(args.calib, args, "calibration")
    cfg = _run_config(args)
    freeze = {None: None, "cw-only": "theta", "pw-only": "a"}[args.ablation]
    params = pipeline.train(calib, cfg, freeze)
    info = params.fit_info
    formats.write_model(params, args.out_model, extra={"config": _effective(args)})
    print(f"nll={info['nll']:.10g} objective={info['objective']:.10g} "
          f"iterations={info['n_iter']}+{info['n_newton']} grad_norm={info['grad_norm']:.3e} "
          f"converged={info['converged']}")
    return 0


def _eval_scorer(args, test: Dataset):
    if args.model:
        params = formats.read_model(args.model)
        return "REPAIR" if not args.name else args.name, ModelScorer(params, test.stats,
                                                                     test.similarity)
    if args.baseline == "base":
        return "Base", base_scorer
    if args.calib is None:
        raise errors.ValidationError(f"--baseline {args.baseline} tunes tau on --calib")
    calib = _load(args.calib, args, "calibration")
    method = {"logitadj": "logit_adjust", "taunorm": "tau_norm"}[args.baseline]
    if method == "tau_norm" and not tau_norm_available(calib.stats):
        raise errors.MissingWeightNorms("class stats carry no weight norms")
    tau = tune_tau(calib, method, k=args.k)
    print(f"tuned tau={tau}")
    scorer = (LogitAdjScorer if method == "logit_adjust" else TauNormScorer)(calib.stats, tau)
    return ("LogitAdj" if method == "logit_adjust" else "tau-norm"), scorer


def cmd_eval(args) -> int:
    test = _load(args.test, args, "test")
    config = _effective(args)
    if args.sweep_k or args.subsample:
        if args.calib is None:
            raise errors.ValidationError("--sweep-k and --subsample need --calib")
        calib = _load(args.calib, args, "calibration")
        cfg = _run_config(args)
        if args.subsample:
            res = pipeline.subsample_trials(calib, test, cfg, args.subsample, args.trials,
                                            args.seed)
            res["config"] = config
            print(_dump(res))
            if args.report:
                Path(args.report).write_text(_dump(res) + "\n")
            return 0
        ks = _int_list(args.sweep_k)
        rows, all_reports = [], {}
        for k in ks:
            run = pipeline.run_methods(calib, test, cfg.replace(k=k))
            all_reports[str(k)] = pipeline.report_dict(run.reports)
            rows.append((k, {m: r.hit1 for m, r in run.reports.items()}))
        methods = list(rows[0][1])
        print("k    " + "  ".join(f"{m:>9}" for m in methods))
        for k, h in rows:
            print(f"{k:<4} " + "  ".join(f"{100 * h[m]:9.1f}" for m in methods))
        if args.report:
            Path(args.report).write_text(_dump({"sweep_k": all_reports, "config": config}) + "\n")
        return 0
    if (args.model is None) == (args.baseline is None):
        raise errors.ValidationError("give exactly one of --model or --baseline")
    name, scorer = _eval_scorer(args, test)
    batch = build_shortlists(test, args.k)
    report = evaluate(batch, scorer, test.stats, base_scorer)
    print(formats.format_table({name: report}))
    if args.report:
        formats.write_report(report, args.report, config)
    return 0


def cmd_diagnose(args) -> int:
    test = _load(args.test, args, "test")
    batch = build_shortlists(test, args.k)
    K = test.K
    if args.quintiles:
        if not (args.model_a and args.model_b):
            raise errors.ValidationError("--quintiles needs --model-a and --model-b")
        sa = ModelScorer(formats.read_model(args.model_a), test.stats, test.similarity)
        sb = ModelScorer(formats.read_model(args.model_b), test.stats, test.similarity)
        hm, tot = per_class_hits(batch, sa, K)
        hc, _ = per_class_hits(batch, sb, K)
        q = quintile_gains(test.stats.rare_mask, class_dispersions(batch, K), hm, hc, tot)
        write_quintile_csv(q, args.quintiles)
        print("quintile delta_hit1: " + " ".join(f"{g:+.4f}" for g in q.gains))
    if args.witness_pairs:
        truth = None
        sidecar = args.sidecar or _sibling(args.test, SIDECAR_FILE)
        if sidecar is not None:
            synth = attach_sidecar(test, test, load_sidecar(sidecar))
            truth = restricted_log_posterior(synth, batch)
            pairs = list(synth.confuser_pairs) if args.planted_only else None
        else:
            pairs = None
        found = scan_witnesses(batch, truth, K, pairs)
        with open(args.witness_pairs, "w") as fh:
            fh.write("u,v,example_u,example_v,t_u,t_v,feasible_offsets\n")
            for w in found:
                n_ok = offset_scan(w.t_u, w.t_v).size
                fh.write(f"{w.u},{w.v},{w.ctx_u.example_id},{w.ctx_v.example_id},"
                         f"{w.t_u!r},{w.t_v!r},{n_ok}\n")
        print(f"{len(found)} witness pairs")
    return 0


def cmd_repro(args) -> int:
    summary = pipeline.repro(args.figure, _int_list(args.seeds), args.out_dir,
                             _run_config(args), n_jobs=args.jobs)
    summary["cli_config"] = _effective(args)
    if args.out_dir:
        Path(args.out_dir, "summary.json").write_text(_dump(summary) + "\n")
    for c in summary["checks"]:
        label = " ".join(str(c[key]) for key in ("regime", "k", "method", "check") if key in c)
        value = c.get("rho_mean", c.get("hit1_mean", c.get("value")))
        if isinstance(value, list):
            value = "[" + ", ".join(f"{v:.3f}" for v in value) + "]"
        elif isinstance(value, float):
            value = f"{value:.3f}"
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {label}: {value}"
              + (f" (target {c['target']} +- {c['tol']})" if "target" in c else ""))
    return 0


def cmd_sweep(args) -> int:
    calib = _load(args.calib, args, "calibration")
    res = pipeline.sweep(calib, _run_config(args))
    res["config"] = _effective(args)
    print(_dump(res["best"]))
    if args.out:
        Path(args.out).write_text(_dump(res) + "\n")
    return 0


# --- parser --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--class-stats", help=f"class stats file (default: {STATS_FILE} beside data)")
    p.add_argument("--similarity", help=f"similarity file (default: {SIM_FILE} beside data)")
    p.add_argument("--features", choices=("auto", "base", "similarity"), default="auto")
    p.add_argument("--k", type=int, default=10)


def _model_opts(p):
    p.add_argument("--lambda-a", type=float, default=1e-3)
    p.add_argument("--lambda-theta", type=float, default=1e-3)
    p.add_argument("--shrinkage-groups", type=int, default=1)
    p.add_argument("--freq-smoothing", type=float, default=1.0)
    p.add_argument("--no-shrink", action="store_true")
    p.add_argument("--alpha", type=float, default=None, help="accepted and recorded; unused")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--config")
    p.add_argument("--regime", default="class-separable",
                   choices=("class-separable", "non-class-separable"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    for name, typ in SPEC_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit and shrink a reranker on calibration scores")
    _common(p)
    _model_opts(p)
    p.add_argument("--calib", required=True)
    p.add_argument("--ablation", choices=("cw-only", "pw-only"), default=None)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a model or baseline on test scores")
    _common(p)
    _model_opts(p)
    p.add_argument("--test", required=True)
    p.add_argument("--model")
    p.add_argument("--name", help="method name shown for --model")
    p.add_argument("--baseline", choices=("base", "logitadj", "taunorm"))
    p.add_argument("--calib")
    p.add_argument("--report")
    p.add_argument("--sweep-k", help="comma list of k; fits and evaluates all methods")
    p.add_argument("--subsample", type=float, help="calibration fraction per trial")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="dispersion quintiles and crossing witnesses")
    _common(p)
    p.add_argument("--test", required=True)
    p.add_argument("--model-a", help="method model (e.g. REPAIR)")
    p.add_argument("--model-b", help="reference model (e.g. classwise)")
    p.add_argument("--quintiles", help="CSV output for quintile gains")
    p.add_argument("--witness-pairs", help="CSV output for crossing witnesses")
    p.add_argument("--sidecar", help=f"oracle sidecar (default: {SIDECAR_FILE} beside data)")
    p.add_argument("--planted-only", action="store_true",
                   help="scan only the planted confuser pairs")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("repro", help="reproduce a synthetic figure or table")
    p.add_argument("--config")
    _model_opts(p)
    p.add_argument("--figure", choices=pipeline.FIGURES, required=True)
    p.add_argument("--seeds", default="0..4")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_repro, features="auto", k=10)

    p = sub.add_parser("sweep", help="grid-search penalties on calibration Hit@1")
    _common(p)
    _model_opts(p)
    p.add_argument("--calib", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values installed as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    values = formats.read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise errors.ParseError(f"unknown config keys {unknown}", None, None, args.config)
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (errors.RepairError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
