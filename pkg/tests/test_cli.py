"""Command-line front end: config validation, outputs, exit codes."""

import csv
import json

import pytest

from absde_lab import cli

SUMMARY_KEYS = [
    "Y0_mean", "Y0_stderr", "outer_iterations", "norms", "certified",
    "applicability", "seed", "strategy", "timings",
]


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def martingale_config(tmp_path, **extra):
    doc = {
        "problem": {"builtin": "martingale"},
        "numerics": {"n_T": 4, "n_paths": 300, "scheme": "explicit"},
        **extra,
    }
    return write_config(tmp_path, doc)


def test_solve_writes_summary_and_slices(tmp_path):
    summary = tmp_path / "summary.json"
    slices = tmp_path / "slices.csv"
    cfg = martingale_config(
        tmp_path,
        outputs={"summary_path": str(summary), "slices_path": str(slices)},
    )
    assert cli.main(["solve", "--config", cfg]) == 0

    doc = json.loads(summary.read_text())
    assert list(doc) == SUMMARY_KEYS
    assert doc["strategy"] == "lipschitz"
    assert doc["certified"] is True
    assert abs(doc["Y0_mean"]) < 5 * doc["Y0_stderr"] + 1e-12
    assert doc["seed"] == 0

    with open(slices) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "y_mean", "y_std", "z_abs_mean", "z2_slice"]
    assert len(rows) == 1 + 5  # header plus n_total + 1 slices
    assert float(rows[1][0]) == 0.0
    assert float(rows[-1][0]) == 1.0


def test_summary_reproducible_modulo_timings(tmp_path):
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    cfg1 = martingale_config(tmp_path, outputs={"summary_path": str(out1)})
    assert cli.main(["solve", "--config", cfg1]) == 0
    doc2 = {
        "problem": {"builtin": "martingale"},
        "numerics": {"n_T": 4, "n_paths": 300, "scheme": "explicit"},
        "outputs": {"summary_path": str(out2)},
    }
    cfg2 = write_config(tmp_path, doc2, name="config2.json")
    assert cli.main(["solve", "--config", cfg2]) == 0

    a, b = json.loads(out1.read_text()), json.loads(out2.read_text())
    a.pop("timings")
    b.pop("timings")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_seed_override_changes_result(tmp_path):
    out = tmp_path / "s.json"
    cfg = martingale_config(tmp_path, outputs={"summary_path": str(out)})
    assert cli.main(["solve", "--config", cfg]) == 0
    base = json.loads(out.read_text())
    assert cli.main(["solve", "--config", cfg, "--seed", "7"]) == 0
    other = json.loads(out.read_text())
    assert other["seed"] == 7
    assert other["Y0_mean"] != base["Y0_mean"]


def test_solve_to_stdout_without_paths(tmp_path, capsys):
    cfg = martingale_config(tmp_path)
    assert cli.main(["solve", "--config", cfg]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert list(doc) == SUMMARY_KEYS


def test_unknown_keys_exit_2(tmp_path, capsys):
    bad_top = write_config(tmp_path, {
        "problem": {"builtin": "martingale"},
        "numerics": {"n_T": 4, "n_paths": 300},
        "sampler": {},
    })
    assert cli.main(["solve", "--config", bad_top]) == 2
    assert "sampler" in capsys.readouterr().err

    bad_numerics = write_config(tmp_path, {
        "problem": {"builtin": "martingale"},
        "numerics": {"n_T": 4, "paths": 300},
    }, name="n.json")
    assert cli.main(["solve", "--config", bad_numerics]) == 2

    bad_builtin = write_config(tmp_path, {
        "problem": {"builtin": "heat_equation"},
        "numerics": {"n_T": 4, "n_paths": 300},
    }, name="b.json")
    assert cli.main(["solve", "--config", bad_builtin]) == 2
    assert "heat_equation" in capsys.readouterr().err

    bad_override = write_config(tmp_path, {
        "problem": {"builtin": "martingale", "volatility": 2.0},
        "numerics": {"n_T": 4, "n_paths": 300},
    }, name="o.json")
    assert cli.main(["solve", "--config", bad_override]) == 2


def test_invalid_json_exit_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert cli.main(["solve", "--config", str(path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err
    assert cli.main(["solve", "--config", str(tmp_path / "missing.json")]) == 2


def test_solver_failure_exit_3(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "problem": {"builtin": "small_quadratic", "eps0": 5.0},
        "numerics": {"n_T": 8, "n_paths": 400},
        "strategy": "picard-small",
    })
    assert cli.main(["solve", "--config", cfg]) == 3
    assert "solver error" in capsys.readouterr().err


def test_check_reports_exact_radius(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "problem": {
            "generator": "y^2 + z^2",
            "T": 1.0,
            "K": 0.0,
            "constants": {"C": 1.0, "gamma": 1.0, "L": 1.0},
        },
        "numerics": {"n_T": 4, "n_paths": 300},
    })
    assert cli.main(["check", "--config", cfg]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["constants"]["C"] == 1.0
    assert doc["constants"]["L"] == 1.0
    small = doc["applicability"]["small-terminal"]
    assert small["verdict"] == "applies"
    assert small["radius_sq"] == 3.0517578125e-05


def test_convergence_study(tmp_path):
    study = tmp_path / "study.csv"
    cfg = write_config(tmp_path, {
        "problem": {"builtin": "martingale"},
        "numerics": {"n_T": 8, "n_paths": 300, "scheme": "explicit"},
        "outputs": {"study_path": str(study)},
        "study": {"grids": [4, 8], "paths": [300], "reference": "auto"},
    })
    assert cli.main(["convergence", "--config", cfg, "--jobs", "2"]) == 0
    with open(study) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n_T", "n_paths", "Y0", "stderr", "abs_error", "runtime_ms"]
    assert [r[0] for r in rows[1:]] == ["4", "8"]
    for row in rows[1:]:
        assert abs(float(row[2])) < 0.2  # Y0 near the closed form 0
        assert float(row[4]) == abs(float(row[2]))  # abs_error against 0


def test_convergence_self_reference_zeroes_finest(tmp_path):
    study = tmp_path / "study.csv"
    cfg = write_config(tmp_path, {
        "problem": {"builtin": "small_quadratic"},
        "numerics": {"n_T": 8, "n_paths": 400},
        "strategy": "picard-small",
        "outputs": {"study_path": str(study)},
        "study": {"grids": [4, 8], "paths": [400], "reference": "self"},
    })
    assert cli.main(["convergence", "--config", cfg]) == 0
    with open(study) as fh:
        rows = list(csv.reader(fh))
    assert float(rows[-1][4]) == 0.0  # finest cell defines the reference


def test_convergence_config_errors(tmp_path, capsys):
    no_ref = write_config(tmp_path, {
        "problem": {"builtin": "small_quadratic"},
        "numerics": {"n_T": 8, "n_paths": 400},
        "study": {"grids": [4, 8], "paths": [400]},
    })
    assert cli.main(["convergence", "--config", no_ref]) == 2
    assert "reference" in capsys.readouterr().err

    bad_grids = write_config(tmp_path, {
        "problem": {"builtin": "martingale"},
        "numerics": {"n_T": 6, "n_paths": 300},
        "study": {"grids": [4, 6], "paths": [300], "reference": "auto"},
    }, name="g.json")
    assert cli.main(["convergence", "--config", bad_grids]) == 2
    assert "nested" in capsys.readouterr().err


def test_validate_filter(capsys):
    assert cli.main(["validate", "--filter", "constants"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "1 of 1 criteria passed" in out

    assert cli.main(["validate", "--filter", "nosuchtag"]) == 2
