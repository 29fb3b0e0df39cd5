import csv
import json
import pathlib

import pytest

from fftfem import cli_bench, poisson_solver, selftest
from fftfem.errors import SecularSolveError


def _run(tmp_path: pathlib.Path, *args: str, suffix: str = ".csv"):
    out = tmp_path / f"out{suffix}"
    code = cli_bench.main([*args, "--cache-dir", "none", "--out", str(out), "-q"])
    return code, out


def _rows(path: pathlib.Path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_csv_headers(snapshot):
    for cmd in sorted(cli_bench.SCHEMAS):
        snapshot.assert_match(cli_bench.format_csv(cmd, []), f"{cmd}.csv")


def test_solve(tmp_path: pathlib.Path):
    code, out = _run(tmp_path, "--cmd", "solve", "--K", "16", "--n", "2")
    assert code == cli_bench.EXIT_OK
    (row,) = _rows(out)
    assert row["schema"] == "fftfem.solve/1"
    assert row["K"] == "16x16"
    assert row["n"] == "2x2"
    assert int(row["dof"]) == 31 * 31
    assert float(row["error"]) < 1e-3
    assert float(row["residual"]) < 1e-9


def test_solve_json_sines_3d(tmp_path: pathlib.Path):
    code, out = _run(
        tmp_path,
        "--cmd",
        "solve",
        "--preset",
        "sines",
        "--dims",
        "3",
        "--K",
        "8",
        "12",
        "8",
        "--n",
        "2",
        "--X",
        "1",
        "2",
        "1",
        "--algorithm",
        "b",
        suffix=".json",
    )
    assert code == cli_bench.EXIT_OK
    (record,) = json.loads(out.read_text(encoding="utf-8"))
    assert record["K"] == "8x12x8"
    assert record["X"] == "1.0x2.0x1.0"
    assert record["algorithm"] == "b"
    assert record["error"] < 1e-2


def test_convergence(tmp_path: pathlib.Path):
    code, out = _run(
        tmp_path, "--cmd", "convergence", "--K", "8", "16", "32", "--n", "2"
    )
    assert code == cli_bench.EXIT_OK
    rows = _rows(out)
    assert [int(r["K"]) for r in rows] == [8, 16, 32]
    assert rows[0]["order"] == ""
    for r in rows[1:]:
        assert float(r["order"]) > 2.5


def test_bench(tmp_path: pathlib.Path):
    code, out = _run(
        tmp_path, "--cmd", "bench", "--K", "4", "8", "--n", "1", "2", "--repeat", "1"
    )
    assert code == cli_bench.EXIT_OK
    rows = _rows(out)
    assert len(rows) == 8
    assert {r["algorithm"] for r in rows} == {"a", "b"}
    for r in rows:
        assert (r["ratio_K"] == "") == (r["K"] == "4")
        assert (r["ratio_n"] == "") == (r["n"] == "1")
        assert float(r["solve_s"]) >= 0


def test_spectrum(tmp_path: pathlib.Path):
    code, out = _run(tmp_path, "--cmd", "spectrum", "--n", "2", "3")
    assert code == cli_bench.EXIT_OK
    rows = _rows(out)
    interior = [r for r in rows if r["kind"] == "interior"]
    element = [r for r in rows if r["kind"] == "element"]
    assert [(r["n"], r["parity"]) for r in interior] == [
        ("2", "even"),
        ("3", "even"),
        ("3", "odd"),
    ]
    assert [float(r["value"]) for r in interior] == pytest.approx([2.5, 2.5, 10.5])
    assert len(element) == 3 + 4


def test_selftest_failure_exit_code(tmp_path: pathlib.Path, monkeypatch):
    def broken(ctx):
        raise AssertionError("broken on purpose")

    checks = [
        selftest.Check("demo", "always fails", broken),
        selftest.Check("demo", "always passes", lambda ctx: None),
    ]
    monkeypatch.setattr(selftest, "CHECKS", checks)
    code, out = _run(tmp_path, "--cmd", "selftest")
    assert code == cli_bench.EXIT_SELFTEST
    rows = _rows(out)
    assert [r["passed"] for r in rows] == ["False", "True"]
    assert "broken on purpose" in rows[0]["detail"]


def test_numerical_error_exit_code(tmp_path: pathlib.Path, monkeypatch):
    def fail(*args, **kwargs):
        raise SecularSolveError("no roots")

    monkeypatch.setattr(poisson_solver, "build_plan", fail)
    code, out = _run(tmp_path, "--cmd", "solve", "--K", "4")
    assert code == cli_bench.EXIT_NUMERICAL
    assert not out.exists()


@pytest.mark.parametrize(
    "args",
    [
        pytest.param(["--K", "1"], id="too-few-elements"),
        pytest.param(["--cmd", "convergence", "--K", "6"], id="not-power-of-two"),
        pytest.param(["--alpha", "-100"], id="alpha-bound"),
    ],
)
def test_invalid_config_exit_code(args, tmp_path: pathlib.Path, capsys):
    code, _ = _run(tmp_path, *args)
    assert code == cli_bench.EXIT_USAGE
    assert "invalid configuration" in capsys.readouterr().err


def test_unknown_flag_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        cli_bench.main(["--cmd", "teleport"])
    assert info.value.code == cli_bench.EXIT_USAGE


def test_config_file_with_flag_override(tmp_path: pathlib.Path):
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps({"cmd": "spectrum", "orders": [4], "verbosity": 1}), "utf-8"
    )
    code, out = _run(tmp_path, "--config", str(config), "--n", "2")
    assert code == cli_bench.EXIT_OK
    assert {r["n"] for r in _rows(out)} == {"2"}


def test_missing_config_file(tmp_path: pathlib.Path, capsys):
    code, _ = _run(tmp_path, "--config", str(tmp_path / "missing.json"))
    assert code == cli_bench.EXIT_USAGE
    assert "cannot read config file" in capsys.readouterr().err


def test_stdout_output(capsys):
    code = cli_bench.main(["--cmd", "spectrum", "--n", "1", "--cache-dir", "none"])
    assert code == cli_bench.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(cli_bench.SCHEMAS["spectrum"])
    assert len(lines) == 1 + 2


@pytest.mark.parametrize(
    "coarse,fine,expected", [(1e-2, 2.5e-3, 2.0), (1.0, 0.0, None), (0.0, 0.0, None)]
)
def test_observed_order(coarse: float, fine: float, expected):
    assert cli_bench.observed_order(coarse, fine) == expected


def test_unwritable_output_exit_code(tmp_path: pathlib.Path, caplog):
    out = tmp_path / "missing" / "out.csv"
    code = cli_bench.main(
        ["--cmd", "spectrum", "--n", "2", "--cache-dir", "none", "--out", str(out)]
    )
    assert code == cli_bench.EXIT_USAGE
    assert "Cannot write results" in caplog.text
    assert not out.exists()


def test_repeat_runs_are_bitwise_identical(tmp_path: pathlib.Path):
    args = ["--cmd", "solve", "--K", "8", "--n", "3", "--threads", "1"]
    records = []
    for name in ("first", "second"):
        run_dir = tmp_path / name
        run_dir.mkdir()
        code, out = _run(run_dir, *args, suffix=".json")
        assert code == cli_bench.EXIT_OK
        (record,) = json.loads(out.read_text(encoding="utf-8"))
        records.append(record)
    first, second = records
    assert first["error"] == second["error"]
    assert first["residual"] == second["residual"]
    code, out = _run(tmp_path, "--cmd", "spectrum", "--n", "2", "5")
    assert code == cli_bench.EXIT_OK
    spectrum = out.read_bytes()
    _run(tmp_path, "--cmd", "spectrum", "--n", "2", "5")
    assert out.read_bytes() == spectrum
