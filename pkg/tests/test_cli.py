import csv
import json

import numpy as np
import pytest

from ldgstokes.cli import ConfigError, main, parse_config, tau_window
from ldgstokes.io import read_solution


def write_cfg(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def rows(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.reader(lines))


SMALL = "[case]\nname = periodic\nn = 4\ndegree = 1\n"


def test_parse_config_routes_sections():
    kw, run = parse_config(SMALL + "[physics]\nmu1 = 2.5\n[sweep]\ntaus = 0.1, 1\n")
    assert kw == {"case": "periodic", "n": 4, "degree": 1, "mu1": 2.5}
    assert run.sweep_taus == [0.1, 1.0]


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[case]\ncolour = red\n", "[case]\nn = four\n",
                                  "[output]\nformat = hdf5\n", "[sweep]\ntaus = -1\n"])
def test_parse_config_is_strict(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_bad_config_exits_2(tmp_path, capsys):
    assert main(["rho", "--config", write_cfg(tmp_path, "[case]\ncolour = red\n"), "--quiet"]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["rho", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["rho", "--config", write_cfg(tmp_path, "[case]\ndim = 3\ndegree = 4\n")]) == 2


def test_solve_zero_rhs_gives_zero_solution(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "rhs = zero\n[output]\nformat = text\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    sol = read_solution(tmp_path / "solution.txt")
    assert not sol.coeffs.any()
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["iterations"] == 0 and "errors" not in rep


def test_solve_reports_errors(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("n = 4", "n = 8"))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["converged"] and rep["relative_residual"] < 1e-6
    assert rep["errors"]["velocity_l2"] < 0.1
    assert read_solution(tmp_path / "solution.bin").n == 8


def test_rho_is_deterministic_apart_from_wall_time(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    got = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["--quiet", "rho", "--config", cfg, "--out", str(out), "--seed", "7"]) == 0
        header, row = rows(out / "rho.csv")
        assert header[-1] == "wall_time"
        got.append(row[:-1])
        meta = (out / "rho.csv").read_text().splitlines()
        assert "# seed: 7" in meta
    assert got[0] == got[1]
    assert float(got[0][5]) < 0.2


def test_sweep_writes_window(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["sweep-tau", "--config", cfg, "--out", str(tmp_path), "--taus", "0.01,0.1,1",
                 "--quiet"]) == 0
    _, *data = rows(tmp_path / "sweep_tau.csv")
    assert [float(r[4]) for r in data] == [0.01, 0.1, 1.0]
    assert (tmp_path / "sweep_tau.dat").exists() and (tmp_path / "sweep_tau_window.csv").exists()


def test_tau_window_rule():
    taus = [1e-3, 1e-2, 1e-1, 1.0]
    rhos = [0.9, 0.19, 0.1, 0.4]
    # epsilon = 0 keeps only the minimiser; epsilon near 1 keeps everything below 1
    best, rmin, win = tau_window(taus, rhos, 0.0)
    assert (best, rmin, list(win)) == (0.1, 0.1, [0.1])
    assert list(tau_window(taus, rhos, 0.3)[2]) == [1e-2, 1e-1]   # cut 0.1^0.7 = 0.1995
    assert list(tau_window(taus, rhos, 0.99)[2]) == taus


def test_convergence_needs_three_grids(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path), "--grids", "4,8",
                 "--quiet"]) == 2


def test_convergence_exact_mode_orders(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path), "--grids", "8,16,32",
                 "--exact", "--quiet"]) == 0
    header, *data = rows(tmp_path / "convergence_orders.csv")
    orders = {r[0]: float(r[1]) for r in data}
    assert abs(orders["velocity_l2"] - 2.0) < 0.15


def test_identity_spectrum_is_one(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["spectrum", "--config", cfg, "--out", str(tmp_path), "--identity",
                 "--krylov-dim", "10", "--quiet"]) == 0
    header, *data = rows(tmp_path / "spectrum.csv")
    rec = dict(zip(header, data[0]))
    assert np.isclose(float(rec["max_real"]), 1.0) and np.isclose(float(rec["min_real"]), 1.0)
