import csv
import io
import json

from enkf_rare.cli import build_parser, config_from_args, main


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["run", "--problem", "convex", "--J", "300", "--delta-target", "1",
               "--trials", "2", "--seed", "5", "--out", str(out), "--deterministic"])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["schema"] == 1 and summary["config"]["base_seed"] == 5
    rows = list(csv.DictReader(io.StringIO((out / "trials.csv").read_text())))
    assert [r["seed"] for r in rows] == ["5", "6"]
    assert json.loads((out / "summary.json").read_text())["n_errors"] == 0
    assert len(json.loads((out / "models.json").read_text())) == 2


def test_config_file_with_overrides(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"problem": "parabolic", "J": 800, "trials": 7}))
    args = build_parser().parse_args(["run", "--config", str(cfg_path), "--J", "1200", "--local",
                                      "--alpha", "1.5"])
    cfg = config_from_args(args)
    assert cfg.J == 1200 and cfg.trials == 7
    assert cfg.localization == "local" and cfg.alpha == 1.5


def test_adaptive_flag():
    args = build_parser().parse_args(["run", "--problem", "series", "--adaptive-K", "4", "--trials", "1"])
    cfg = config_from_args(args)
    assert cfg.localization == "adaptive" and cfg.adaptive_K == 4


def test_global_flag_overrides_problem_default():
    args = build_parser().parse_args(["run", "--problem", "series", "--global", "--trials", "1"])
    assert config_from_args(args).localization == "global"


def test_curves(capsys):
    assert main(["curves", "--sigma", "1,0.5", "--n", "5"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 10 and set(rows[0]) == {"sigma", "g", "enkf", "sis"}


def test_theory(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    assert main(["theory", "--J", "2000", "--dt", "0.01", "--times", "0.5,1", "--out", str(out)]) == 0
    assert "max deviation" in capsys.readouterr().out
    assert out.read_text().startswith("t,m1,m2,C11,failure_fraction")
    assert main(["theory", "--b", "-1", "--J", "2000", "--dt", "0.05", "--times", "5",
                 "--mode", "with-failure-init", "--dt-growth", "--out", str(out)]) == 0
    assert "large-time limit" in capsys.readouterr().out


def test_mc(capsys):
    assert main(["mc", "--problem", "affine(1,0,-1)", "--n", "10000"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["n"] == 10000 and 0.1 < res["pf"] < 0.2


def test_bad_problem_reports_error(capsys):
    assert main(["run", "--problem", "nope", "--trials", "1"]) == 2
    assert "unknown problem" in capsys.readouterr().err
