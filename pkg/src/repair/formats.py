"""Text and JSON file formats.

Score files
    First line ``K=<int> N=<int> format=<dense|sparse> k_min=<int>``
    (``k_min`` optional). Dense rows are ``example_id,label,s_0,...,s_{K-1}``;
    sparse rows are ``example_id,label,c1:s1,c2:s2,...``.
Class statistics
    Lines ``class_id,count[,weight_norm]`` in any order, one per class.
Similarity
    Lines ``i,j,value``; the symmetric closure is applied on load.
Model
    JSON carrying a schema tag, all parameters and their provenance.

Floats are written with ``repr`` so that reading back is exact. Blank lines
and lines starting with ``#`` are ignored by every text reader.
"""

from __future__ import annotations

import configparser
import json
import math
from pathlib import Path

import numpy as np

from . import errors
from .types import REPORT_KEYS, ClassStats, Dataset, EvalReport, ModelParams, ScoreRecord, \
    Similarity

MODEL_SCHEMA = "repair-model/1"
_HEADER_KEYS = ("K", "N", "format", "k_min")


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.strip() and not line.lstrip().startswith("#"):
                yield lineno, line


def _fields(line: str):
    """Comma-separated fields with their 1-based starting columns."""
    out, col = [], 1
    for part in line.split(","):
        out.append((part.strip(), col))
        col += len(part) + 1
    return out


def _num(text, cast, lineno, col, path):
    try:
        v = cast(text)
    except ValueError:
        raise errors.ParseError(f"cannot parse {text!r} as {cast.__name__}", lineno, col, path)
    if cast is float and not math.isfinite(v):
        raise errors.ParseError(f"non-finite value {text!r}", lineno, col, path)
    return v


def _fmt(x) -> str:
    return repr(float(x))


def _parse_header(line: str, path):
    out = {}
    col = 1
    for token in line.split(" "):
        if token:
            key, sep, value = token.partition("=")
            if not sep or key not in _HEADER_KEYS or key in out:
                raise errors.ParseError(f"bad header token {token!r}", 1, col, path)
            out[key] = value
        col += len(token) + 1
    for key in ("K", "N", "format"):
        if key not in out:
            raise errors.ParseError(f"header lacks {key}=", 1, None, path)
    if out["format"] not in ("dense", "sparse"):
        raise errors.ParseError(f"unknown format {out['format']!r}", 1, None, path)
    K = _num(out["K"], int, 1, None, path)
    N = _num(out["N"], int, 1, None, path)
    k_min = _num(out["k_min"], int, 1, None, path) if "k_min" in out else None
    if K < 1 or N < 0:
        raise errors.ParseError("header needs K >= 1 and N >= 0", 1, None, path)
    return K, N, out["format"], k_min


def read_scores_file(path):
    """Parse a score file; returns ``(records, K, format, k_min)``."""
    lines = _lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise errors.ParseError("empty score file", 1, None, path)
    K, N, fmt, k_min = _parse_header(header, path)
    records = []
    seen = set()
    for lineno, line in lines:
        fields = _fields(line)
        if len(fields) < 2:
            raise errors.ParseError("row needs example_id and label", lineno, 1, path)
        eid = _num(fields[0][0], int, lineno, fields[0][1], path)
        label = _num(fields[1][0], int, lineno, fields[1][1], path)
        if eid in seen:
            raise errors.ParseError(f"duplicate example_id {eid}", lineno, fields[0][1], path)
        seen.add(eid)
        if not 0 <= label < K:
            raise errors.ParseError(f"label {label} outside [0, {K})", lineno, fields[1][1], path)
        body = fields[2:]
        if fmt == "dense":
            if len(body) != K:
                raise errors.HeaderMismatch(f"dense row has {len(body)} scores, K={K}",
                                            lineno, None, path)
            scores = np.array([_num(t, float, lineno, c, path) for t, c in body])
            records.append(ScoreRecord(eid, label, scores))
            continue
        classes, scores = [], []
        for text, col in body:
            cls, sep, val = text.partition(":")
            if not sep:
                raise errors.ParseError(f"sparse entry {text!r} lacks ':'", lineno, col, path)
            c = _num(cls.strip(), int, lineno, col, path)
            if not 0 <= c < K:
                raise errors.ParseError(f"class id {c} outside [0, {K})", lineno, col, path)
            if c in classes:
                raise errors.ParseError(f"duplicate class id {c}", lineno, col, path)
            classes.append(c)
            scores.append(_num(val.strip(), float, lineno, col, path))
        if k_min is not None and len(classes) < k_min:
            raise errors.HeaderMismatch(f"sparse row has {len(classes)} < k_min={k_min} entries",
                                        lineno, None, path)
        records.append(ScoreRecord(eid, label, np.array(scores), np.array(classes)))
    if len(records) != N:
        raise errors.HeaderMismatch(f"header says N={N}, file has {len(records)} rows",
                                    None, None, path)
    return records, K, fmt, k_min


def read_scores(path) -> list:
    """Score records of a dense or sparse score file."""
    return read_scores_file(path)[0]


def write_scores(records, path, K: int, k_min: int | None = None) -> None:
    """Write records densely when all are dense, otherwise sparsely."""
    records = list(records)
    dense = all(not r.is_sparse for r in records)
    fmt = "dense" if dense else "sparse"
    if k_min is None:
        k_min = K if dense else min((r.n_scored for r in records), default=0)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"K={K} N={len(records)} format={fmt} k_min={k_min}\n")
        for r in records:
            if dense:
                body = ",".join(_fmt(s) for s in r.scores)
            else:
                body = ",".join(f"{int(c)}:{_fmt(s)}" for c, s in zip(r.class_ids(), r.scores))
            fh.write(f"{r.example_id},{r.true_label},{body}\n")


def read_class_stats(path) -> ClassStats:
    rows = {}
    norms = {}
    for lineno, line in _lines(path):
        fields = _fields(line)
        if len(fields) not in (2, 3):
            raise errors.ParseError("expected class_id,count[,weight_norm]", lineno, None, path)
        c = _num(fields[0][0], int, lineno, fields[0][1], path)
        n = _num(fields[1][0], int, lineno, fields[1][1], path)
        if c < 0 or n < 0:
            raise errors.ParseError("class ids and counts must be non-negative", lineno, None,
                                    path)
        if c in rows:
            raise errors.ParseError(f"class {c} listed twice", lineno, fields[0][1], path)
        rows[c] = n
        if len(fields) == 3:
            norms[c] = _num(fields[2][0], float, lineno, fields[2][1], path)
    if not rows:
        raise errors.ParseError("no class rows", None, None, path)
    K = max(rows) + 1
    if len(rows) != K:
        raise errors.ParseError(f"class ids must cover 0..{K - 1} exactly", None, None, path)
    if norms and len(norms) != K:
        raise errors.ParseError("weight norms must be given for every class or none",
                                None, None, path)
    counts = np.array([rows[c] for c in range(K)], dtype=np.int64)
    weight_norms = np.array([norms[c] for c in range(K)]) if norms else None
    return ClassStats(counts, weight_norms)


def write_class_stats(stats: ClassStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in range(stats.K):
            line = f"{c},{int(stats.counts[c])}"
            if stats.weight_norms is not None:
                line += f",{_fmt(stats.weight_norms[c])}"
            fh.write(line + "\n")


def read_similarity(path, K: int) -> Similarity:
    entries = {}
    for lineno, line in _lines(path):
        fields = _fields(line)
        if len(fields) != 3:
            raise errors.ParseError("expected i,j,value", lineno, None, path)
        i = _num(fields[0][0], int, lineno, fields[0][1], path)
        j = _num(fields[1][0], int, lineno, fields[1][1], path)
        v = _num(fields[2][0], float, lineno, fields[2][1], path)
        if not (0 <= i < K and 0 <= j < K):
            raise errors.ParseError(f"class pair ({i}, {j}) outside [0, {K})", lineno, None, path)
        if not 0.0 <= v <= 1.0:
            raise errors.ParseError(f"similarity {v} outside [0, 1]", lineno, fields[2][1], path)
        if i == j:
            if v != 1.0:
                raise errors.ParseError("diagonal similarity must be 1", lineno, None, path)
            continue
        key = (min(i, j), max(i, j))
        if key in entries and abs(entries[key] - v) > 1e-12:
            raise errors.ParseError(f"asymmetric similarity for pair {key}", lineno, None, path)
        entries[key] = v
    rows = [i for i, _ in entries] + [j for _, j in entries]
    cols = [j for _, j in entries] + [i for i, _ in entries]
    vals = list(entries.values()) * 2
    return Similarity.from_triplets(K, rows, cols, vals)


def write_similarity(sim: Similarity, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j, v in zip(*sim.triplets()):
            fh.write(f"{int(i)},{int(j)},{_fmt(v)}\n")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def model_to_dict(params: ModelParams) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "K": params.K,
        "d": params.d,
        "feature_layout": list(params.feature_layout),
        "a": params.a.tolist(),
        "theta": params.theta.tolist(),
        "lambda_a": float(params.lambda_a),
        "lambda_theta": float(params.lambda_theta),
        "feature_mean": params.feature_mean.tolist(),
        "feature_scale": params.feature_scale.tolist(),
        "freq_smoothing": float(params.freq_smoothing),
        "fitted_on": params.fitted_on,
        "shrunk": bool(params.shrunk),
        "fit_info": _jsonable(params.fit_info),
    }


def model_from_dict(obj: dict, path=None) -> ModelParams:
    if obj.get("schema") != MODEL_SCHEMA:
        raise errors.VersionMismatch(
            f"model schema {obj.get('schema')!r}, expected {MODEL_SCHEMA!r}", None, None, path)
    try:
        params = ModelParams(a=obj["a"], theta=obj["theta"], lambda_a=obj["lambda_a"],
                             lambda_theta=obj["lambda_theta"],
                             feature_layout=obj["feature_layout"],
                             feature_mean=obj["feature_mean"], feature_scale=obj["feature_scale"],
                             freq_smoothing=obj["freq_smoothing"], fitted_on=obj["fitted_on"],
                             shrunk=obj["shrunk"], fit_info=obj.get("fit_info", {}))
    except KeyError as exc:
        raise errors.ParseError(f"model file lacks field {exc}", None, None, path)
    if params.K != obj["K"] or params.d != obj["d"]:
        raise errors.ParseError("stored K/d disagree with parameter lengths", None, None, path)
    return params


def write_model(params: ModelParams, path, extra: dict | None = None) -> None:
    obj = model_to_dict(params)
    if extra:
        obj["provenance"] = _jsonable(extra)
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def read_model(path) -> ModelParams:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise errors.ParseError(exc.msg, exc.lineno, exc.colno, path)
    return model_from_dict(obj, path)


def report_to_dict(report: EvalReport) -> dict:
    return _jsonable(report.to_dict())


def report_from_dict(obj: dict) -> EvalReport:
    per_class = obj.get("per_class")
    if per_class is not None:
        per_class = {int(c): tuple(v) for c, v in per_class.items()}
    return EvalReport(**{key: obj[key] for key in REPORT_KEYS}, per_class=per_class)


def write_report(report, path, config: dict | None = None) -> None:
    """Write one report, or a ``{method: report}`` mapping, as JSON."""
    if isinstance(report, EvalReport):
        body = report_to_dict(report)
    else:
        body = {name: report_to_dict(r) for name, r in report.items()}
    obj = {"report": body}
    if config is not None:
        obj["config"] = _jsonable(config)
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def read_report(path):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))["report"]
    if "hit1" in obj:
        return report_from_dict(obj)
    return {name: report_from_dict(r) for name, r in obj.items()}


def _pct(v) -> str:
    return "—" if v is None else f"{100 * v:.1f}"


TABLE_COLUMNS = ("Method", "Hit@1", "Hit@3", "MRR", "Rare", "Freq", "HFR", "R@k", "rho_k")


def format_table(reports: dict) -> str:
    """Aligned text table, one row per method, percentages with one decimal."""
    rows = [TABLE_COLUMNS]
    for name, r in reports.items():
        rho = "—" if r.rho_k is None else f"{r.rho_k:.3f}"
        rows.append((name, _pct(r.hit1), _pct(r.hit3), _pct(r.mrr), _pct(r.rare_hit1),
                     _pct(r.freq_hit1), _pct(r.hfr), _pct(r.recall_at_k), rho))
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                       for i, (cell, w) in enumerate(zip(row, widths))) for row in rows]
    return "\n".join(lines)


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def read_config(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment line."""
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                       interpolation=None)
    parser.optionxform = str
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string("[config]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise errors.ParseError(str(exc), None, None, path)
    return {key.replace("-", "_"): _coerce(v.strip()) for key, v in parser["config"].items()}


def write_dataset(d: Dataset, path, k_min: int | None = None) -> None:
    write_scores(d.records, path, d.K, k_min)


def load_dataset(scores_path, stats: ClassStats, similarity: Similarity | None = None,
                 role: str = "test") -> Dataset:
    records, K, _, _ = read_scores_file(scores_path)
    if K != stats.K:
        raise errors.HeaderMismatch(f"score file has K={K}, class stats K={stats.K}",
                                    1, None, scores_path)
    return Dataset(tuple(records), stats, similarity, role)
