import json

import pytest

from anisoadapt.cli import EXIT_ERROR, EXIT_OK, EXIT_WARN, main


def test_run_ok(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["run", "--problem", "tanh", "--metric", "isotropic", "--target-elements", "200",
                 "--out", str(out), "--no-timing"])
    assert code in (EXIT_OK, EXIT_WARN)
    assert (out / "report.csv").exists()
    assert "stop:" in capsys.readouterr().out


def test_run_warning_exit(tmp_path):
    code = main(["run", "--problem", "tanh", "--metric", "isotropic", "--target-elements", "200",
                 "--max-adapt-iters", "2"])
    assert code == EXIT_WARN


def test_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"problem": "patch", "metric": "hbee-aniso", "target_elements": 150}))
    assert main(["run", "--config", str(cfg)]) == EXIT_OK


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"target_elements": 150, "bogus": 1}))
    assert main(["run", "--config", str(cfg)]) == EXIT_ERROR
    cfg.write_text(json.dumps({"solver": {"nope": 1}}))
    assert main(["run", "--config", str(cfg)]) == EXIT_ERROR


def test_missing_config_is_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR


def test_study_needs_exact_solution():
    assert main(["study", "--problem", "aniso", "--n", "200,300"]) == EXIT_ERROR


def test_study_writes_csv(tmp_path, capsys):
    code = main(["study", "--problem", "tanh", "--metric", "isotropic", "--n", "200,400",
                 "--max-adapt-iters", "2", "--out", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_WARN)
    assert (tmp_path / "study.csv").read_text().startswith("N,elements,h1err")


@pytest.mark.parametrize("argv", [["run", "--smoothing", "maybe"], ["study", "--n", "1,x"], ["frobnicate"]])
def test_bad_arguments(argv):
    assert main(argv) == EXIT_ERROR


def test_help_is_ok(capsys):
    assert main(["--help"]) == EXIT_OK
