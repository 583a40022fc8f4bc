import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sparse_hjb import cli
from sparse_hjb import hjb_solver as hs

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(*args):
    return cli.main([str(a) for a in args])


def read_rows(path):
    return list(csv.reader(Path(path).open()))


def test_unknown_key_exits_2_and_names_it(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[problem]\nkind = scalar-linear\nsigmaa = 0.1\n")
    assert run("solve", "--config", cfg, "--out", tmp_path) == 2
    assert "sigmaa" in capsys.readouterr().err


@pytest.mark.parametrize(
    "override",
    ["problem.c=abc", "grid.points=3", "problem.kind=pendulum", "nosection=1", "simulation.n_paths=1.5"],
)
def test_bad_values_exit_2(tmp_path, override):
    assert run("solve", "--config", CONFIGS / "scalar.ini", "--out", tmp_path, "--override", override) == 2


def test_unparseable_file_exits_2(tmp_path):
    cfg = tmp_path / "broken.ini"
    cfg.write_text("this is not ini\n")
    assert run("solve", "--config", cfg) == 2
    assert run("solve", "--config", tmp_path / "missing.ini") == 2


def test_bad_subcommand_exits_2():
    assert run("explode") == 2


def test_solve_round_trip(tmp_path, capsys):
    args = ["--config", CONFIGS / "scalar.ini", "--out", tmp_path, "--override", "grid.points=101"]
    assert run("solve", *args) == 0
    out = capsys.readouterr().out
    assert "V(0, x0=[0.5])" in out and "CFL" in out
    cfg = cli.load_config(CONFIGS / "scalar.ini", ["grid.points=101"])
    spec, grid = cli.build_problem(cfg), cli.build_grid(cfg)
    field = hs.solve_backward(spec, grid, cli.build_solver_config(cfg, spec, grid))
    assert hs.read_field(tmp_path / "value_field.txt").equals(field)


def test_boundary_and_analytic_column(tmp_path):
    base = ["--config", CONFIGS / "scalar_det.ini", "--out", tmp_path, "--override", "grid.points=201"]
    assert run("solve", *base) == 0
    assert run("boundary", *base, "--field", tmp_path / "value_field.txt", "--times", "0,0.5,1") == 0
    rows = read_rows(tmp_path / "boundary.csv")
    assert rows[0] == ["s", "channel", "branch", "x1", "analytic"]
    for s, _, branch, x, ref in rows[1:]:
        if branch == "-" and float(x) > 0:
            assert abs(float(x) - float(ref)) <= 2 * 0.02


def test_boundary_missing_field_exits_2(tmp_path):
    assert run("boundary", "--config", CONFIGS / "scalar.ini", "--field", tmp_path / "nope.txt") == 2
    assert run("boundary", "--config", CONFIGS / "scalar.ini") == 2


def test_custom_zero_problem(tmp_path):
    base = ["--config", CONFIGS / "custom_zero.ini", "--out", tmp_path]
    assert run("solve", *base) == 0
    assert run("boundary", *base, "--field", tmp_path / "value_field.txt") == 0
    assert (tmp_path / "boundary.csv").read_text() == "s,channel,branch,x1\n"
    assert run("simulate", *base) == 0
    report = dict(zip(*read_rows(tmp_path / "report_zero.csv")))
    assert float(report["mean_cost_L0"]) == 0.0 and float(report["std_error_L0"]) == 0.0


def test_simulate_l0_and_paired_l2(tmp_path):
    base = [
        "--config", CONFIGS / "scalar.ini", "--out", tmp_path,
        "--override", "grid.points=201", "--override", "simulation.n_paths=200",
    ]
    assert run("solve", *base) == 0
    field = tmp_path / "value_field.txt"
    assert run("simulate", *base, "--field", field, "--controller", "l0") == 0
    assert run("simulate", *base, "--controller", "l2", "--seed", "20210531") == 0
    for i in range(5):
        u = [r[2] for r in read_rows(tmp_path / f"paths_l0_{i}.csv")[1:-1]]
        assert set(float(v) for v in u) <= {-1.0, 0.0, 1.0}
    l0 = dict(zip(*read_rows(tmp_path / "report_l0.csv")))
    l2 = dict(zip(*read_rows(tmp_path / "report_l2.csv")))
    assert l0["noise_checksum"] == l2["noise_checksum"]
    assert float(l2["sparsity_fraction"]) > float(l0["sparsity_fraction"])
    u2 = np.array([float(r[2]) for r in read_rows(tmp_path / "paths_l2_0.csv")[1:-1]])
    assert np.count_nonzero(u2) == u2.size


def test_incompatible_controller_exits_2(tmp_path):
    assert run("simulate", "--config", CONFIGS / "lfc.ini", "--out", tmp_path, "--controller", "det-law") == 2
    assert run("simulate", "--config", CONFIGS / "scalar.ini", "--out", tmp_path, "--controller", "l0") == 2


def test_infeasible_resolution_exits_3(tmp_path):
    code = run("solve", "--config", CONFIGS / "custom_zero.ini", "--out", tmp_path,
               "--override", "problem.A=1e9", "--override", "grid.points=4001")
    assert code == 3


def test_compare_stochastic_scalar(tmp_path, capsys):
    assert run("compare", "--config", CONFIGS / "scalar.ini", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 5
    rows = read_rows(tmp_path / "verdicts.csv")
    assert all(r[1] == "PASS" for r in rows[1:])


def test_compare_exit_code_follows_verdicts(tmp_path, capsys):
    code = run("compare", "--config", CONFIGS / "scalar_det.ini", "--out", tmp_path)
    verdicts = [r[1] for r in read_rows(tmp_path / "verdicts.csv")[1:]]
    assert len(verdicts) == 6
    assert code == (0 if all(v == "PASS" for v in verdicts) else 1)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sparse_hjb", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
