import json

import numpy as np
import pytest

from fpcasmooth.cli import config_hash, main
from fpcasmooth.eigen import read_eigen_csv

pytestmark = pytest.mark.filterwarnings("ignore")


def run(*argv):
    return main([str(a) for a in argv])


def simulate(out, *extra):
    assert run("simulate", "--output-dir", out, "--deterministic", *extra) == 0
    return out / "data.csv"


def test_minimal_simulation_rows(tmp_path):
    data = simulate(tmp_path, "--n", 2, "--m-min", 2, "--m-max", 2)
    lines = data.read_text().splitlines()
    assert lines[0] == "curve_id,t,y" and len(lines) == 5
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config_hash"] == config_hash(man["config"]) and man["seed"] == 0
    assert "timestamp" not in man
    for name in ("truth.json", "truth_covariance.csv", "truth_eigen.csv"):
        assert (tmp_path / name).exists()


def test_simulation_rerun_byte_identical(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"n": 30, "seed": 4, "correlation": "ar1", "rho": 0.3}))
    a = simulate(tmp_path / "a", "--sim-config", cfg)
    b = simulate(tmp_path / "b", "--sim-config", cfg)
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()


def test_malformed_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{n: 3,")
    assert run("simulate", "--output-dir", tmp_path, "--sim-config", bad) == 2
    assert "malformed JSON" in capsys.readouterr().err


def test_unknown_simulation_key_exits_2(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"n": 3, "colour": "red"}))
    assert run("simulate", "--output-dir", tmp_path, "--sim-config", cfg) == 2


def test_empty_data_exits_2(tmp_path, capsys):
    data = tmp_path / "data.csv"
    data.write_text("curve_id,t,y\n")
    assert run("fit", "--input", data, "--output-dir", tmp_path / "o", "--h", 0.05) == 2
    assert "NoData" in capsys.readouterr().err


def test_missing_file_and_bad_flags_exit_2(tmp_path):
    assert run("fit", "--input", tmp_path / "nope.csv", "--output-dir", tmp_path) == 2
    data = simulate(tmp_path / "s", "--n", 20)
    assert run("fit", "--input", data, "--output-dir", tmp_path, "--sigma", "maybe") == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus_flag": 1}))
    assert run("fit", "--input", data, "--output-dir", tmp_path, "--config", cfg) == 2
    with pytest.raises(SystemExit) as exc:
        run("fit")
    assert exc.value.code == 2


def test_numeric_failure_exits_1(tmp_path):
    data = simulate(tmp_path / "s", "--n", 20)
    # noise bandwidth too wide for the oblique window
    assert run("fit", "--input", data, "--output-dir", tmp_path, "--h", 0.05, "--h-sigma", 0.3) == 1


def test_fit_noiseless_rank_one(tmp_path):
    data = simulate(tmp_path / "s", "--n", 200, "--m-min", 200, "--m-max", 200, "--eigenvalues", "1", "--sigma", 0)
    out = tmp_path / "f"
    assert run("fit", "--input", data, "--output-dir", out, "--h", 0.05, "--k", 1,
               "--sigma", "known:0", "--deterministic") == 0
    t, V = read_eigen_csv(out / "eigen.csv")
    w = np.gradient(t)
    assert np.sqrt(np.sum((V[0] - 1.0) ** 2 * w)) < 0.05
    for name in ("covariance.csv", "eigenvalues.csv", "sigma2.json", "manifest.json"):
        assert (out / name).exists()


def test_fit_rerun_identical(tmp_path):
    data = simulate(tmp_path / "s", "--n", 60)
    outs = []
    for d in ("a", "b"):
        assert run("fit", "--input", data, "--output-dir", tmp_path / d, "--h", 0.07, "--deterministic") == 0
        outs.append({p.name: p.read_bytes() for p in (tmp_path / d).iterdir()})
    assert outs[0] == outs[1]


def test_fit_warnings_reach_manifest(tmp_path):
    data = simulate(tmp_path / "s", "--n", 60, "--m-min", 1, "--m-max", 3)
    out = tmp_path / "f"
    assert run("fit", "--input", data, "--output-dir", out, "--h", 0.08, "--sigma", "known:0.25") == 0
    man = json.loads((out / "manifest.json").read_text())
    assert any("ExcludedCurves" in w for w in man["warnings"])


def test_select_singleton(tmp_path):
    data = simulate(tmp_path / "s", "--n", 40)
    out = tmp_path / "sel"
    assert run("select", "--input", data, "--output-dir", out, "--h-grid", "0.07", "--k-grid", "2") == 0
    sel = json.loads((out / "selected.json").read_text())
    assert (sel["K"], sel["h"]) == (2, 0.07)
    assert len((out / "cv_table.csv").read_text().splitlines()) == 2


def test_select_exact_columns(tmp_path):
    data = simulate(tmp_path / "s", "--n", 25)
    out = tmp_path / "sel"
    assert run("select", "--input", data, "--output-dir", out, "--h-grid", "0.06,0.08", "--k-grid", "1,2",
               "--exact") == 0
    rows = (out / "cv_table.csv").read_text().splitlines()
    assert rows[0] == "K,h,approx_score,exact_score,selected" and len(rows) == 5
    assert all(r.split(",")[3] != "" for r in rows[1:])
    sel = json.loads((out / "selected.json").read_text())
    assert sel["max_relative_gap"] is not None and len(sel["exact_selected"]) == 2


def test_select_resumes_from_cache(tmp_path):
    data = simulate(tmp_path / "s", "--n", 40)
    out = tmp_path / "sel"
    args = ("select", "--input", data, "--output-dir", out, "--h-grid", "0.06,0.08", "--k-grid", "1,2",
            "--deterministic")
    assert run(*args) == 0
    first = (out / "cv_table.csv").read_text()
    cached = out / "cache" / f"row_K1_h{0.06!r}.json"
    row = json.loads(cached.read_text())
    row["approx_score"] = -123.0
    cached.write_text(json.dumps(row))
    assert run(*args) == 0
    second = (out / "cv_table.csv").read_text()
    assert "-123.0" in second and "-123.0" not in first
    sel = json.loads((out / "selected.json").read_text())
    assert (sel["K"], sel["h"]) == (1, 0.06)


def test_evaluate(tmp_path):
    data = simulate(tmp_path / "s", "--n", 150)
    assert run("fit", "--input", data, "--output-dir", tmp_path / "f", "--h", 0.07) == 0
    assert run("evaluate", "--fit-dir", tmp_path / "f", "--truth-dir", tmp_path / "s",
               "--output-dir", tmp_path / "e") == 0
    ev = json.loads((tmp_path / "e/evaluation.json").read_text())
    assert len(ev["eigenfunction_loss"]) == 2 and all(0 <= v < 1 for v in ev["eigenfunction_loss"])
    assert "sigma2_error" in ev


def test_bias_demo_small(tmp_path):
    assert run("bias-demo", "--output-dir", tmp_path, "--n", 300, "--seeds", 2) == 0
    header = (tmp_path / "bias_demo.csv").read_text().splitlines()[0]
    assert header == "t,naive_diag_mean,predicted_inflation,modified_diag_mean,truth"
    s = json.loads((tmp_path / "bias_summary.json").read_text())
    assert set(s) >= {"max_relative_inflation_error", "naive_offdiag_mean"}


def test_rate_study_small(tmp_path):
    assert run("rate-study", "--output-dir", tmp_path, "--ns", "50,100", "--reps", 2) == 0
    assert len((tmp_path / "rate_study.csv").read_text().splitlines()) == 3
    assert np.isfinite(json.loads((tmp_path / "rate_summary.json").read_text())["slope"])


def test_config_file_supplies_defaults(tmp_path):
    data = simulate(tmp_path / "s", "--n", 40)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"h": 0.09, "k": 1}))
    assert run("fit", "--input", data, "--output-dir", tmp_path / "f", "--config", cfg) == 0
    man = json.loads((tmp_path / "f/manifest.json").read_text())
    assert man["config"]["h"] == 0.09 and man["config"]["K"] == 1
