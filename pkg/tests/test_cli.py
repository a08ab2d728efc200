"""Command-line behavior: config merging, outputs, determinism, errors."""

import csv

import numpy as np
import pytest

from miqpbo.cli import _parse_groups, main
from miqpbo.gp import Box, Dataset, KernelParams, save_dataset
from miqpbo.bo import load_trace
from miqpbo.model import parse_lp_text
from miqpbo.pwl import build_pwl, max_error

QUICK = ["--mip-gap", "0.5", "--node-limit", "25", "--pool-size", "2"]


def run_cli(argv):
    return main([str(a) for a in argv])


def bo_run_args(out_dir, **overrides):
    args = ["bo-run", "--benchmark", "multimodal", "--replications", 2,
            "--budget", 1, "--init-samples", 3, "--seed", 11,
            "--out-dir", out_dir] + QUICK
    for key, value in overrides.items():
        args += [f"--{key.replace('_', '-')}", value]
    return args


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.reader(handle))


def test_linearize_outputs(tmp_path):
    code = run_cli(["linearize", "--variance", 1.0, "--lengthscale", 0.25,
                    "--dim", 2, "--lower", "0,0", "--upper", "1,1",
                    "--out-dir", tmp_path])
    assert code == 0
    rows = read_rows(tmp_path / "breakpoints.csv")
    assert rows[0] == ["r", "k"]
    assert len(rows) - 1 == 15
    assert float(rows[1][0]) == 0.0
    assert float(rows[1][1]) == 1.0

    fields = dict(read_rows(tmp_path / "error.csv")[1:])
    pwl = build_pwl(KernelParams(variance=1.0, lengthscale=0.25, noise=1e-6),
                    dim=2, box=Box(lower=[0, 0], upper=[1, 1]))
    assert float(fields["eps_m"]) == pytest.approx(max_error(pwl).eps_max,
                                                   abs=1e-15)
    assert int(fields["segments"]) == 14


def test_export_model_minimal_binaries(tmp_path):
    data_path = tmp_path / "one.csv"
    save_dataset(Dataset(np.array([[0.5]]), np.array([0.3])), data_path)
    out = tmp_path / "one.lp"
    code = run_cli(["export-model", "--dataset", data_path,
                    "--variance", 1.0, "--lengthscale", 0.3,
                    "--beta", 2.0, "--lower", "0", "--upper", "1",
                    "--out", out])
    assert code == 0
    text = out.read_text()
    model = parse_lp_text(text)
    assert len(model.binaries) == 7
    binary_line = text.split("Binaries\n")[1].splitlines()[0]
    assert len(binary_line.split()) == 7


def test_bo_run_outputs_and_rerun_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run_cli(bo_run_args(first)) == 0
    assert run_cli(bo_run_args(second)) == 0
    for name in ("trace_seed11.csv", "trace_seed12.csv", "summary.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert (first / "config.ini").exists()
    assert (first / "timings_seed11.csv").exists()


def test_summary_matches_traces(tmp_path):
    assert run_cli(bo_run_args(tmp_path, budget="2")) == 0
    regrets = {}
    for seed in (11, 12):
        trace = load_trace(tmp_path / f"trace_seed{seed}.csv")
        regrets[seed] = [record.regret for record in trace.records]
    rows = read_rows(tmp_path / "summary.csv")
    assert rows[0] == ["iteration", "regret_mean", "regret_std"]
    assert len(rows) - 1 == 2
    for row in rows[1:]:
        t = int(row[0])
        column = [regrets[s][t - 1] for s in (11, 12)]
        assert abs(float(row[1]) - np.mean(column)) <= 1e-12
        assert abs(float(row[2]) - np.std(column)) <= 1e-12


def test_config_file_and_flag_precedence(tmp_path):
    config = tmp_path / "exp.ini"
    config.write_text(
        "[experiment]\nbenchmark = multimodal\nreplications = 1\n"
        "budget = 2\nseed = 3\n"
        "[bo]\ninit_samples = 3\npool_size = 2\n"
        "[solver]\nmip_gap = 0.5\nnode_limit = 25\npool_size = 2\n")
    out = tmp_path / "out"
    code = run_cli(["bo-run", "--config", config, "--budget", 1,
                    "--out-dir", out])
    assert code == 0
    trace = load_trace(out / "trace_seed3.csv")
    assert len(trace.records) == 1            # flag beat the file's budget
    snapshot = (out / "config.ini").read_text()
    assert "budget = 1" in snapshot
    assert "benchmark = multimodal" in snapshot


def test_env_time_limit_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MIQPBO_TIME_LIMIT", "0")
    out = tmp_path / "out"
    assert run_cli(bo_run_args(out, replications="1")) == 0
    assert "time_limit = 0" in (out / "config.ini").read_text()
    trace = load_trace(out / "trace_seed11.csv")
    assert len(trace.records) == 1            # warm start carries the round


def test_workers_match_serial(tmp_path):
    serial, parallel = tmp_path / "s", tmp_path / "p"
    assert run_cli(bo_run_args(serial)) == 0
    assert run_cli(bo_run_args(parallel, workers="2")) == 0
    for name in ("trace_seed11.csv", "trace_seed12.csv", "summary.csv"):
        assert (serial / name).read_bytes() == (parallel / name).read_bytes()


def test_solve_acq_report(tmp_path, capsys):
    argv = ["solve-acq", "--dim", 1, "--points", 5, "--seed", 2,
            "--beta", 2.0, "--mip-gap", 0.5, "--node-limit", 100,
            "--out-dir", tmp_path / "acq"]
    assert run_cli(argv) == 0
    text = (tmp_path / "acq" / "report.txt").read_text()
    assert capsys.readouterr().out == text
    fields = {}
    for line in text.splitlines():
        for token in line.split():
            if "=" in token:
                key, _, value = token.partition("=")
                fields[key] = value
    assert fields["status"] in ("optimal", "gap_reached", "time_limit")
    float(fields["miqp_lcb"])
    float(fields["nelder_mead_lcb"])
    assert fields["winner"] in ("miqp", "nelder_mead", "tie")

    rerun = tmp_path / "acq2"
    assert run_cli(argv[:-1] + [rerun]) == 0
    assert (rerun / "report.txt").read_text() == text


def test_addgp_group_parsing():
    assert _parse_groups("0,1|2") == ((0, 1), (2,))
    assert _parse_groups("0 1 | 2") == ((0, 1), (2,))
    assert _parse_groups("") is None
    with pytest.raises(ValueError):
        _parse_groups("0,1||2")


def test_unknown_benchmark_fails(tmp_path, capsys):
    code = run_cli(["bo-run", "--benchmark", "branin", "--out-dir", tmp_path,
                    "--config", tmp_path / "missing.ini"])
    assert code == 1
    assert "missing.ini" in capsys.readouterr().err

    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nbenchmark = nope\n")
    code = run_cli(["bo-run", "--config", bad, "--out-dir", tmp_path])
    assert code == 1
    assert "nope" in capsys.readouterr().err


def test_unknown_config_key_fails(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nbenchmark = multimodal\ntypo_key = 1\n")
    assert run_cli(["bo-run", "--config", bad, "--out-dir", tmp_path]) == 1
    assert "typo_key" in capsys.readouterr().err


def test_bo_run_requires_benchmark_and_out_dir(tmp_path, capsys):
    assert run_cli(["bo-run", "--out-dir", tmp_path]) == 1
    assert "benchmark" in capsys.readouterr().err
    assert run_cli(["bo-run", "--benchmark", "multimodal"]) == 1
    assert "out-dir" in capsys.readouterr().err
