import json
import subprocess
import sys

import numpy as np
import pytest

from repair.cli import _int_list, main
from repair.formats import read_model, read_report


SMALL = ["--K", "20", "--n-train", "600", "--n-test", "300"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cs")
    assert main(["synth", "--out-dir", str(out), "--seed", "1", *SMALL]) == 0
    return out


@pytest.fixture(scope="module")
def ncs_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ncs")
    argv = ["synth", "--regime", "non-class-separable", "--out-dir", str(out), "--seed", "2",
            "--K", "40", "--n-train", "1500", "--n-test", "800", "--n-confusers", "6"]
    assert main(argv) == 0
    return out


def test_int_list():
    assert _int_list("0..4") == [0, 1, 2, 3, 4]
    assert _int_list("5,10") == [5, 10]


def test_synth_writes_all_files_deterministically(data_dir, tmp_path):
    names = ["calib.scores", "test.scores", "class_stats.csv", "similarity.csv", "oracle.npz",
             "spec.json"]
    assert all((data_dir / n).exists() for n in names)
    assert main(["synth", "--out-dir", str(tmp_path), "--seed", "1", *SMALL]) == 0
    for n in names[:4]:
        assert (tmp_path / n).read_bytes() == (data_dir / n).read_bytes()


def test_fit_eval_round_trip(data_dir, tmp_path, capsys):
    model = tmp_path / "m.json"
    assert main(["fit", "--calib", str(data_dir / "calib.scores"), "--k", "5",
                 "--out-model", str(model)]) == 0
    assert "converged=True" in capsys.readouterr().out
    p = read_model(model)
    assert p.K == 20 and p.d == 5 and p.shrunk
    report = tmp_path / "r.json"
    assert main(["eval", "--test", str(data_dir / "test.scores"), "--model", str(model),
                 "--k", "5", "--report", str(report)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[0] == "Method"
    rep = read_report(report)
    assert 0 <= rep.hit1 <= rep.hit3 <= 1
    obj = json.loads(report.read_text())
    assert obj["config"]["k"] == 5


def test_fit_is_deterministic(data_dir, tmp_path):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        main(["fit", "--calib", str(data_dir / "calib.scores"), "--k", "5", "--out-model", str(p)])
    assert np.array_equal(read_model(paths[0]).a, read_model(paths[1]).a)
    assert np.array_equal(read_model(paths[0]).theta, read_model(paths[1]).theta)


def test_ablations(data_dir, tmp_path):
    cw, pw = tmp_path / "cw.json", tmp_path / "pw.json"
    main(["fit", "--calib", str(data_dir / "calib.scores"), "--ablation", "cw-only",
          "--out-model", str(cw)])
    main(["fit", "--calib", str(data_dir / "calib.scores"), "--ablation", "pw-only",
          "--out-model", str(pw)])
    assert np.all(read_model(cw).theta == 0.0)
    assert np.all(read_model(pw).a == 0.0)


@pytest.mark.filterwarnings("ignore:tau-norm skipped")
def test_baselines_and_base_features(data_dir, capsys):
    test = str(data_dir / "test.scores")
    assert main(["eval", "--test", test, "--baseline", "base"]) == 0
    assert main(["eval", "--test", test, "--baseline", "logitadj", "--calib",
                 str(data_dir / "calib.scores")]) == 0
    out = capsys.readouterr().out
    assert "tuned tau=" in out and "LogitAdj" in out
    # synthetic class stats carry no weight norms
    assert main(["eval", "--test", test, "--baseline", "taunorm", "--calib",
                 str(data_dir / "calib.scores")]) == 1


def test_sweep_k_and_subsample(data_dir, tmp_path, capsys):
    args = ["eval", "--test", str(data_dir / "test.scores"), "--calib",
            str(data_dir / "calib.scores")]
    assert main(args + ["--sweep-k", "3,5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and lines[1].split()[0] == "3"
    out = tmp_path / "sub.json"
    assert main(args + ["--subsample", "0.5", "--trials", "2", "--report", str(out)]) == 0
    methods = json.loads(out.read_text())["methods"]
    assert "repair_wins" in methods["Classwise"]


def test_missing_file_exit_code(tmp_path, capsys):
    assert main(["fit", "--calib", str(tmp_path / "none.scores"), "--class-stats",
                 str(tmp_path / "none.csv"), "--out-model", str(tmp_path / "m.json")]) == 1
    assert "error:" in capsys.readouterr().err


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "repair", "fit"], capture_output=True)
    assert proc.returncode == 2


def test_config_file_and_override(data_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# penalties\nlambda-a = 0.5\nk = 5\n")
    m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
    calib = str(data_dir / "calib.scores")
    assert main(["fit", "--config", str(cfg), "--calib", calib, "--out-model", str(m1)]) == 0
    assert main(["fit", "--config", str(cfg), "--calib", calib, "--lambda-a", "0.01",
                 "--out-model", str(m2)]) == 0
    c1 = json.loads(m1.read_text())["provenance"]["config"]
    c2 = json.loads(m2.read_text())["provenance"]["config"]
    assert c1["lambda_a"] == 0.5 and c1["k"] == 5
    assert c2["lambda_a"] == 0.01 and c2["k"] == 5
    bad = tmp_path / "bad.cfg"
    bad.write_text("lambda_z = 1\n")
    assert main(["fit", "--config", str(bad), "--calib", calib, "--out-model", str(m1)]) == 1


def test_diagnose_outputs(ncs_dir, tmp_path, capsys):
    calib, test = str(ncs_dir / "calib.scores"), str(ncs_dir / "test.scores")
    ma, mb = tmp_path / "a.json", tmp_path / "b.json"
    main(["fit", "--calib", calib, "--out-model", str(ma)])
    main(["fit", "--calib", calib, "--ablation", "cw-only", "--out-model", str(mb)])
    q, w = tmp_path / "q.csv", tmp_path / "w.csv"
    assert main(["diagnose", "--test", test, "--model-a", str(ma), "--model-b", str(mb),
                 "--quintiles", str(q), "--witness-pairs", str(w), "--planted-only"]) == 0
    rows = q.read_text().splitlines()
    assert rows[0] == "class_id,mean_D,bin,delta_hit1"
    assert {r.split(",")[2] for r in rows[1:]} == {"1", "2", "3", "4", "5"}
    wit = w.read_text().splitlines()
    assert len(wit) >= 2
    # every witness leaves no feasible offset on the grid
    assert all(line.split(",")[-1] == "0" for line in wit[1:])


def test_repro_single_seed(tmp_path, capsys):
    assert main(["repro", "--figure", "fig2", "--seeds", "0", "--out-dir", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["checks"]
    assert (tmp_path / "fig2.csv").exists()
    out = capsys.readouterr().out
    assert out.count("PASS") + out.count("FAIL") == len(summary["checks"])
