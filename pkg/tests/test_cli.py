"""End-to-end checks of the command line entry point.

Everything calls ``main()`` in process so exit codes and printed output can
be asserted directly.
"""

import json

import numpy as np
import pytest
import yaml

from odchain.cli import main


def test_validate_packaged_preset_by_name(capsys):
    assert main(["validate", "--scenario", "toy"]) == 0
    out = capsys.readouterr().out
    assert "is valid" in out
    assert "12 ODs" in out
    assert "5 legs" in out


def test_validate_reports_problems(tmp_path, toy_doc, capsys):
    toy_doc["models"] = ["seed", "warp"]
    path = tmp_path / "broken.yaml"
    path.write_text(yaml.safe_dump(toy_doc))
    assert main(["validate", "--scenario", str(path)]) == 1
    err = capsys.readouterr().err
    assert "problem:" in err
    assert "warp" in err


def test_run_writes_report(tmp_path, capsys):
    out = tmp_path / "results"
    code = main([
        "run", "--scenario", "toy", "--models", "seed,kf",
        "--seed", "3", "--out", str(out),
    ])
    assert code == 0
    assert (out / "report.csv").is_file()
    assert (out / "report.json").is_file()
    assert (out / "kf_diagnostics.csv").is_file()
    assert (out / "leg_diagnostics.csv").is_file()
    # profiles are opt-in
    assert not (out / "profiles").exists()
    payload = json.loads((out / "report.json").read_text())
    assert payload["seed"] == 3
    assert [r["model"] for r in payload["rows"]] == ["seed", "kf"]
    stdout = capsys.readouterr().out
    assert "model" in stdout and "rmse_od" in stdout
    assert "report written to" in stdout


def test_run_emit_profiles(tmp_path):
    out = tmp_path / "results"
    code = main([
        "run", "--scenario", "toy", "--models", "seed,kf",
        "--out", str(out), "--emit-profiles",
    ])
    assert code == 0
    files = sorted((out / "profiles").glob("*.csv"))
    assert len(files) == 12


def test_run_refresh_assignment_flag(tmp_path):
    out = tmp_path / "results"
    code = main([
        "run", "--scenario", "toy", "--models", "seed,kf",
        "--out", str(out), "--refresh-assignment",
    ])
    assert code == 0
    assert (out / "report.csv").is_file()


def test_run_model_subset_rows(tmp_path):
    out = tmp_path / "results"
    assert main(["run", "--scenario", "toy", "--models", "seed", "--out", str(out)]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].startswith("seed,")


def test_unknown_model_is_config_error(tmp_path, capsys):
    code = main(["run", "--scenario", "toy", "--models", "warp", "--out", str(tmp_path)])
    assert code == 1
    assert "unknown models" in capsys.readouterr().err


def test_missing_file_is_io_error(capsys):
    code = main(["run", "--scenario", "/no/such/dir/scenario.yaml"])
    assert code == 3
    assert "error:" in capsys.readouterr().err


def test_unknown_preset_name_is_io_error():
    assert main(["validate", "--scenario", "definitely-not-a-preset"]) == 3


def test_bad_yaml_is_config_error(tmp_path, capsys):
    path = tmp_path / "mangled.yaml"
    path.write_text("legs: [unterminated\n")
    assert main(["validate", "--scenario", str(path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_usage_error_exits_with_config_code():
    with pytest.raises(SystemExit) as exc:
        main(["run"])  # --scenario is required
    assert exc.value.code == 1


def test_unrecognized_flag_exits_with_config_code():
    with pytest.raises(SystemExit) as exc:
        main(["validate", "--scenario", "toy", "--bogus"])
    assert exc.value.code == 1


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "run" in capsys.readouterr().out


def test_failed_model_maps_to_numerical_exit(tmp_path, capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise np.linalg.LinAlgError("synthetic failure")

    monkeypatch.setattr("odchain.experiment.predict_horizon", boom)
    code = main([
        "run", "--scenario", "toy", "--models", "seed,kf", "--out", str(tmp_path / "o"),
    ])
    assert code == 2
    assert "failed: " in capsys.readouterr().out


def test_show_network(capsys):
    assert main(["show-network", "--scenario", "toy"]) == 0
    out = capsys.readouterr().out
    assert "zones (5)" in out
    assert "links (16)" in out
    assert "paths (12)" in out
    assert "detectors: 4a 4b" in out
