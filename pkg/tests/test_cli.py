import json
import subprocess
import sys

import pytest

from cylwiener import harness
from cylwiener.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main

SMALL = {
    "isometry": {"n": 8, "m": 8, "steps": 8, "replicas": 2000, "configs": 2},
    "covariance": {"n": 6, "steps": 4, "replicas": 4000, "configs": 2},
    "tail": {"n": 8, "m": [2, 4, 8], "steps": 8, "replicas": 2000},
    "bridge": {"configs": 2, "seeds": 5, "grid": {"cellsPerAxis": 4, "timeSteps": 8}},
    "walsh": {"replicas": 4000, "configs": 2, "grid": {"cellsPerAxis": 4, "timeSteps": 8}},
    "rates": {"n": 256, "m": [8, 16, 32, 64]},
}


def write_config(tmp_path, body, name="cfg.json"):
    p = tmp_path / name
    p.write_text(body if isinstance(body, str) else json.dumps(body))
    return p


def run_cli(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_list_suites(capsys):
    code, out, _ = run_cli(["list-suites"], capsys)
    assert code == EXIT_OK
    assert "isometry" in out and "bridge" in out
    names = [line.split()[0] for line in out.splitlines() if line and not line.startswith(" ")]
    assert names == list(harness.SUITES) and len(names) == 6


def test_replicas_zero_is_usage_error(tmp_path, capsys):
    cfg = write_config(tmp_path, {"suite": "isometry", "replicas": 0})
    code, _, err = run_cli(["run", "--config", cfg], capsys)
    assert code == EXIT_USAGE
    assert "replicas" in err


def test_malformed_json_reports_position(tmp_path, capsys):
    cfg = write_config(tmp_path, '{\n  "suite": "isometry",\n  "n": }')
    code, _, err = run_cli(["run", "--config", cfg], capsys)
    assert code == EXIT_USAGE
    assert "line 3" in err


@pytest.mark.parametrize(
    "body, field",
    [
        ({"suite": "nope"}, "suite"),
        ({"suite": "isometry", "n": 4, "m": 8}, "'m'"),
        ({"suite": "isometry", "colour": 1}, "colour"),
        ({"suite": "isometry", "preset": "other"}, "preset"),
        ({"suite": "isometry", "lambda": [1.0, 2.0]}, "lambda"),
        ({"suite": "walsh", "grid": {"cellsPerAxis": 64}}, "grid"),
        ({"suite": "rates", "n": 64, "m": [8, 16, 64]}, "'m'"),
    ],
)
def test_config_validation(tmp_path, capsys, body, field):
    code, _, err = run_cli(["run", "--config", write_config(tmp_path, body)], capsys)
    assert code == EXIT_USAGE
    assert field in err


def test_missing_config_and_bad_threads(tmp_path, capsys):
    assert run_cli(["run", "--config", tmp_path / "absent.json"], capsys)[0] == EXIT_USAGE
    cfg = write_config(tmp_path, {"suite": "rates", **SMALL["rates"]})
    assert run_cli(["run", "--config", cfg, "--threads", "0"], capsys)[0] == EXIT_USAGE


def test_isometry_default_run(tmp_path, capsys):
    cfg = write_config(tmp_path, {"suite": "isometry", "preset": "cylindrical", "n": 32, "replicas": 10_000, "seed": 7})
    out = tmp_path / "report.csv"
    code, summary, _ = run_cli(["run", "--config", cfg, "--out", out], capsys)
    assert code == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(harness.CSV_COLUMNS)
    assert len(lines) - 1 >= 5
    assert "checks passed" in summary


@pytest.mark.parametrize("suite", list(SMALL))
def test_suites_pass_and_are_thread_invariant(tmp_path, capsys, suite):
    cfg = write_config(tmp_path, {"suite": suite, "seed": 3, **SMALL[suite]})
    outputs = []
    for threads in (1, 4, 8, 1):
        out = tmp_path / f"r{threads}-{len(outputs)}.csv"
        code, _, _ = run_cli(["run", "--config", cfg, "--threads", threads, "--out", out], capsys)
        assert code == EXIT_OK
        outputs.append(out.read_bytes())
    assert all(o == outputs[0] for o in outputs)


def test_every_row_names_oracle_and_provenance():
    for suite, extra in SMALL.items():
        report = harness.run(harness.config_from_dict({"suite": suite, **extra}))
        for r in report.rows:
            assert r.provenance
            assert isinstance(r.oracle, float)


def test_seed_override(tmp_path, capsys):
    cfg = write_config(tmp_path, {"suite": "isometry", "seed": 1, **SMALL["isometry"]})
    _, a, _ = run_cli(["run", "--config", cfg, "--seed", 2], capsys)
    cfg2 = write_config(tmp_path, {"suite": "isometry", "seed": 2, **SMALL["isometry"]}, "b.json")
    _, b, _ = run_cli(["run", "--config", cfg2], capsys)
    _, c, _ = run_cli(["run", "--config", cfg], capsys)
    assert a == b and a != c


def test_rates_writes_plot_csv(tmp_path, capsys):
    cfg = write_config(tmp_path, {"suite": "rates", **SMALL["rates"]})
    out = tmp_path / "rates.csv"
    assert run_cli(["run", "--config", cfg, "--out", out], capsys)[0] == EXIT_OK
    plot = (tmp_path / "rates.rates.csv").read_text().splitlines()
    assert plot[0] == "m,error"
    assert [row.split(",")[0] for row in plot[1:]] == ["8", "16", "32", "64"]


def test_failing_check_exits_one(tmp_path, capsys):
    # z = 1e-9 turns every statistical band into a point; retries cannot rescue it
    cfg = write_config(tmp_path, {"suite": "isometry", "z": 1e-9, "retries": 1, **SMALL["isometry"]})
    code, out, _ = run_cli(["run", "--config", cfg], capsys)
    assert code == EXIT_FAIL
    assert "FAIL" in out
    assert ",1\n" in out


def test_retry_records_attempt():
    cfg = harness.config_from_dict({"suite": "walsh", "z": 1.0, "retries": 2, **SMALL["walsh"]})
    report = harness.run(cfg)
    assert {r.attempt for r in report.rows} <= {0, 1, 2}
    for r in report.rows:
        if r.attempt:
            assert r.statistical


def test_sample_path(tmp_path, capsys):
    out = tmp_path / "path.csv"
    code, _, _ = run_cli(["sample-path", "--preset", "cylindrical", "--n", 3, "--steps", 4, "--seed", 5, "--out", out], capsys)
    assert code == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x1,x2,x3" and len(lines) == 6
    code, stdout, _ = run_cli(["sample-path", "--n", 3, "--steps", 4, "--seed", 5], capsys)
    assert stdout.splitlines() == lines
    assert run_cli(["sample-path", "--n", 0], capsys)[0] == EXIT_USAGE


def test_explicit_spectrum_config():
    cfg = harness.config_from_dict({"suite": "isometry", "lambda": [1.0, 0.5, 0.25], "weights": [1, 1, 1], "m": 3, "replicas": 2000, "configs": 1, "steps": 4})
    assert cfg.n == 3
    assert harness.run(cfg).passed


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "cylwiener.cli", "list-suites"], capture_output=True, text=True)
    assert r.returncode == 0 and "rates" in r.stdout
