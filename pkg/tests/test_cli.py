import csv
import os
import subprocess
import sys

import pytest

from hmmdisp import __version__
from hmmdisp.cli import main
from hmmdisp.io import write_mesh
from hmmdisp.mesh import generate_perturbed_mesh, generate_rect_mesh


def _write(path, text):
    path.write_text(text)
    return str(path)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path / "r.cfg", "mesh.nx = 6\nscenario.preset = five_spot\ntime.N = 4\n"
                                     "output.levels = all\n")
    assert main(["run", cfg]) == 0
    out = tmp_path / "out"
    assert sorted(os.listdir(out)) == ["config_echo.txt", "energy_report.csv", "fields",
                                       "mass_ledger.csv", "run_log.csv", "timings.txt"]
    assert len(os.listdir(out / "fields")) == 5
    assert len(_rows(out / "energy_report.csv")) == 5
    assert len(_rows(out / "mass_ledger.csv")) == 4
    log = _rows(out / "run_log.csv")
    assert [r["level"] for r in log] == ["1", "2", "3", "4"]
    assert float(log[0]["pressure_residual"]) < 1e-8
    assert __version__ in (out / "config_echo.txt").read_text()
    assert "five_spot" in capsys.readouterr().out


def test_run_with_dtc_trace(tmp_path):
    cfg = _write(tmp_path / "r.cfg", "mesh.nx = 4\nscenario.preset = five_spot\ntime.N = 3\n"
                                     "diagnostics.dtc = true\noutput.levels = none\n")
    assert main(["run", cfg]) == 0
    assert len(_rows(tmp_path / "out" / "dtc_trace.csv")) == 3
    assert not (tmp_path / "out" / "fields").exists()


def test_missing_mesh_file(tmp_path, capsys):
    cfg = _write(tmp_path / "r.cfg", "mesh.kind = file\nmesh.path = gone.mesh\n")
    assert main(["run", cfg]) == 2
    assert f"mesh file not found: {tmp_path / 'gone.mesh'}" in capsys.readouterr().err


def test_missing_config(capsys):
    assert main(["run", "/nonexistent.cfg"]) == 2


def test_incompatible_wells_exit_3(tmp_path, capsys):
    cfg = _write(tmp_path / "r.cfg", """mesh.nx = 4
scenario.preset = inline
scenario.porosity = 1
scenario.permeability = 1
scenario.dispersion = 0.1
scenario.injected_conc = 1
scenario.initial = 0
scenario.q_inj = 2
scenario.q_prod = 1
""")
    assert main(["run", cfg]) == 3
    err = capsys.readouterr().err
    assert "compatibility residual 1.000000e+00" in err and "level 1" in err


def test_bad_coefficient_exit_3(tmp_path, capsys):
    cfg = _write(tmp_path / "r.cfg", "mesh.nx = 4\nscenario.preset = five_spot\n"
                                     "scenario.alpha = -1\n")
    assert main(["run", cfg]) == 3


def test_solver_failure_exit_4(tmp_path, capsys):
    cfg = _write(tmp_path / "r.cfg", "mesh.nx = 8\nscenario.preset = five_spot\ntime.N = 2\n"
                                     "solver.pressure.max_iter = 1\n")
    assert main(["run", cfg]) == 4
    assert "level 1" in capsys.readouterr().err


def test_check_mesh(tmp_path, capsys):
    p = str(tmp_path / "u.mesh")
    write_mesh(generate_rect_mesh(1, 1), p)
    assert main(["check-mesh", p]) == 0
    out = capsys.readouterr().out
    assert "admissible" in out and "max_diam_ratio 2.82843" in out
    q = str(tmp_path / "q.mesh")
    write_mesh(generate_perturbed_mesh(8, 8, seed=2), q)
    assert main(["check-mesh", q]) == 0
    bad = _write(tmp_path / "b.mesh", "mesh d=2\nvertices 3\n0 0\n1 0\n1 oops\n")
    assert main(["check-mesh", bad]) == 2
    assert "line 5" in capsys.readouterr().err
    cw = _write(tmp_path / "cw.mesh", "mesh d=2\nvertices 3\n0 0\n0 1\n1 0\ncells 1\n0 1 2\n")
    assert main(["check-mesh", cw]) == 2


def test_converge_usage_errors(tmp_path, capsys):
    cfg = _write(tmp_path / "c.cfg", "scenario.preset = coupled_mms\nmesh.nx = 4\n")
    with pytest.raises(SystemExit) as info:
        main(["converge", cfg, "--levels", "1"])
    assert info.value.code == 2
    phys = _write(tmp_path / "p.cfg", "scenario.preset = five_spot\nmesh.nx = 4\n")
    assert main(["converge", phys, "--levels", "3"]) == 2


def test_converge_deterministic(tmp_path, capsys, monkeypatch):
    cfg = _write(tmp_path / "c.cfg", "scenario.preset = coupled_mms\nmesh.nx = 4\ntime.N = 4\n")
    assert main(["converge", cfg, "--levels", "3"]) == 0
    first = (tmp_path / "out" / "convergence.csv").read_bytes()
    monkeypatch.setenv("HMM_THREADS", "3")
    assert main(["converge", cfg, "--levels", "3"]) == 0
    assert (tmp_path / "out" / "convergence.csv").read_bytes() == first
    rows = _rows(tmp_path / "out" / "convergence.csv")
    errs = [float(r["err_c_uniform"]) for r in rows]
    assert errs[0] > errs[1] > errs[2]
    monkeypatch.setenv("HMM_THREADS", "zero")
    assert main(["converge", cfg, "--levels", "3"]) == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hmmdisp", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and __version__ in r.stdout
