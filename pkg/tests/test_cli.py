import csv
import json
import os

import numpy as np
import pytest

from conftest import write_levels_csv
from scmrelax.cli import EXIT_ERROR, EXIT_OK, effect_summary, estimate, main, run_pipeline
from scmrelax.oracle import GroupStructure, OracleInputs
from scmrelax.panel import PanelData, load_panel_csv


def write_panel(path, y0, Y, start=2000):
    T = len(y0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "TR"] + [f"c{j}" for j in range(Y.shape[1])])
        for t in range(T):
            w.writerow([str(start + t), repr(float(y0[t]))] + [repr(float(v)) for v in Y[t]])
    return [str(start + t) for t in range(T)]


def read_gaps(out):
    with open(os.path.join(out, "counterfactual.csv")) as fh:
        return np.array([float(r["gap"]) for r in csv.DictReader(fh)])


@pytest.fixture
def exact_csv(tmp_path, rng):
    Y = rng.normal(10, 1, size=(30, 5))
    y0 = Y @ np.array([0.5, 0.3, 0.2, 0.0, 0.0])
    times = write_panel(tmp_path / "p.csv", y0, Y)
    return str(tmp_path / "p.csv"), times[20]


@pytest.mark.parametrize("extra", [["--method", "l2", "--eta", "0"], ["--method", "scm"]])
def test_exact_combination_zero_gap(exact_csv, tmp_path, extra):
    path, tt = exact_csv
    out = str(tmp_path / "out")
    code = main(["estimate", "--data", path, "--treated", "TR", "--treatment-time", tt,
                 "--out", out] + extra)
    assert code == EXIT_OK
    assert np.max(np.abs(read_gaps(out))) <= 1e-8
    files = set(os.listdir(out))
    assert files == {"weights.json", "counterfactual.csv", "summary.json", "gap.svg"}
    with open(os.path.join(out, "summary.json")) as fh:
        s = json.load(fh)
    assert s["status"] == "Converged" and len(s["ate_path"]) == 10


def test_injected_effect_recovered(tmp_path):
    errs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        Y = rng.normal(10, 1, size=(40, 8)) + np.linspace(0, 3, 40)[:, None]
        y0 = Y[:, :3].mean(axis=1) + 0.05 * rng.normal(size=40)
        y0[30:] += 1.0
        times = write_panel(tmp_path / "p.csv", y0, Y)
        out = str(tmp_path / f"o{seed}")
        assert main(["estimate", "--data", str(tmp_path / "p.csv"), "--treated", "TR",
                     "--treatment-time", times[30], "--method", "l2", "--out", out]) == EXIT_OK
        with open(os.path.join(out, "summary.json")) as fh:
            errs.append(json.load(fh)["ate_mean"] - 1.0)
    assert abs(np.mean(errs)) <= 0.1


def test_levels_pipeline(tmp_path):
    tt = write_levels_csv(tmp_path / "lv.csv", seed=1)
    out = str(tmp_path / "o")
    code = main(["estimate", "--data", str(tmp_path / "lv.csv"), "--treated", "TR",
                 "--treatment-time", tt, "--method", "l2", "--yoy", "4", "--levels", "--out", out])
    assert code == EXIT_OK
    with open(os.path.join(out, "summary.json")) as fh:
        s = json.load(fh)
    assert s["units"] == "levels"
    assert s["cumulative_effect_ratio"] == pytest.approx(-0.05, abs=0.015)


def test_levels_without_yoy_is_error(tmp_path, capsys):
    tt = write_levels_csv(tmp_path / "lv.csv")
    code = main(["estimate", "--data", str(tmp_path / "lv.csv"), "--treated", "TR",
                 "--treatment-time", tt, "--levels", "--out", str(tmp_path / "o")])
    assert code == EXIT_ERROR
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "InvalidConfig"


def test_unknown_unit_reports_json(exact_csv, tmp_path, capsys):
    path, tt = exact_csv
    code = main(["estimate", "--data", path, "--treated", "XX", "--treatment-time", tt,
                 "--out", str(tmp_path / "o")])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip())
    assert "error" in err and "message" in err


def test_cv_single_point(exact_csv, capsys):
    path, tt = exact_csv
    assert main(["cv", "--data", path, "--treated", "TR", "--treatment-time", tt,
                 "--grid-size", "1"]) == EXIT_OK
    d = json.loads(capsys.readouterr().out)
    assert len(d["grid"]) == 1 and d["chosen"] == d["grid"][0]


def test_cv_scm_rejected(exact_csv, capsys):
    path, tt = exact_csv
    assert main(["cv", "--data", path, "--treated", "TR", "--treatment-time", tt,
                 "--method", "scm"]) == EXIT_ERROR


def test_oracle_single_group(tmp_path, capsys, rng):
    L = rng.normal(size=(1, 3))
    inp = OracleInputs(L, L[0], np.eye(3), GroupStructure.balanced(5, 1))
    f = tmp_path / "o.json"
    f.write_text(json.dumps(inp.to_json_dict()))
    assert main(["oracle", "--input", str(f)]) == EXIT_OK
    d = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(d["w_star"], 0.2, atol=1e-12)
    assert main(["oracle", "--input", str(f), "--divergence", "entropy"]) == EXIT_OK
    np.testing.assert_allclose(json.loads(capsys.readouterr().out)["w_star"], 0.2, atol=1e-7)


def test_simulate_repeatable(tmp_path, capsys):
    args = ["simulate", "--j", "12", "--t0", "25", "--t1", "5", "--reps", "2",
            "--methods", "scm,ridge,l2", "--grid-size", "4"]
    blobs = []
    for k in range(2):
        out = tmp_path / f"s{k}"
        assert main(args + ["--out", str(out)]) == EXIT_OK
        blobs.append((out / "report.json").read_bytes() + (out / "report.csv").read_bytes())
    assert blobs[0] == blobs[1]
    assert "L2Relax" in capsys.readouterr().out


def test_simulate_bad_config(tmp_path, capsys):
    code = main(["simulate", "--j", "10", "--t0", "25", "--reps", "1", "--methods", "scm",
                 "--out", str(tmp_path)] + ["--t1", "0"])
    assert code == EXIT_ERROR
    assert json.loads(capsys.readouterr().err)["field"] == "t1"


def test_standardized_weights_reproduce_raw_predictions(rng):
    Y = rng.normal(5, 1, size=(30, 4)) * [1, 3, 10, 0.5]
    y0 = Y @ [0.4, 0.1, 0.05, 0.2] + rng.normal(0, 0.1, size=30)
    p = PanelData.from_arrays(y0, Y, 24)
    est = estimate(p, "l2", eta=None, standardized=True, grid_size=5)
    np.testing.assert_allclose(est.predicted, Y @ est.weights, rtol=1e-12)
    assert "w_standardized" in est.solution


def test_effect_summary_hand_example():
    s = effect_summary(["a", "b", "c", "d"], [1.0, 2.0, 4.0, 6.0], [1.0, 1.0, 3.0, 3.0], 2)
    assert s["in_sample_risk"] == pytest.approx(0.5)
    assert s["ate_mean"] == pytest.approx(2.0)
    assert s["cumulative_effect"] == pytest.approx(4.0)
    assert s["cumulative_effect_ratio"] == pytest.approx(0.4)
    assert [e["time"] for e in s["ate_path"]] == ["c", "d"]


def test_pipeline_levels_alignment(tmp_path):
    tt = write_levels_csv(tmp_path / "lv.csv", seed=3)
    lv = load_panel_csv(str(tmp_path / "lv.csv"), "TR", tt)
    est, times, obs, pred, t0 = run_pipeline(lv, "scm", yoy=4, to_levels=True)
    assert len(times) == len(obs) == len(pred) == lv.t0 + lv.t1 - 4
    assert times[t0] == tt
    np.testing.assert_allclose(obs, lv.y0[4:])
