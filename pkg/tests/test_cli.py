import json

import numpy as np
import pytest

from riemgrf.cli import main
from riemgrf.errors import DimensionMismatch
from riemgrf.export import export_field, read_field_csv, read_observations, write_points
from riemgrf.mesh import build_grid


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


def obs_file(tmp_path, n=30, d=2, L=6.0, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, d)) * L
    vals = np.sin(pts[:, 0]) + 0.1 * rng.standard_normal(n)
    cols = ["x", "y", "z"][:d]
    write_points(tmp_path / "obs.csv", pts, vals)
    assert (tmp_path / "obs.csv").read_text().splitlines()[0] == ",".join(cols + ["value"])
    return pts, vals


def test_export_csv_and_vtk(tmp_path):
    g = build_grid(2, (1, 1))
    export_field(g, [0, 1, 2, 3], tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "id,x,y,value" and len(lines) == 5
    export_field(g, [0, 1, 2, 3], tmp_path / "f.vtk", "vtk")
    txt = (tmp_path / "f.vtk").read_text()
    assert "POINTS 4 double" in txt and "CELLS 2 8" in txt
    types = txt.split("CELL_TYPES 2\n")[1].split()[:2]
    assert types == ["5", "5"]
    g3 = build_grid(3, (1, 1, 1))
    export_field(g3, np.zeros(8), tmp_path / "t.vtk", "vtk")
    txt = (tmp_path / "t.vtk").read_text()
    assert "CELL_TYPES 6\n" + "10\n" * 6 in txt
    with pytest.raises(DimensionMismatch):
        export_field(g, [1.0], tmp_path / "bad.csv")


def test_csv_roundtrip_bitwise(tmp_path, rng):
    g = build_grid(3, (2, 2, 1), (0.1, 0.3, 1 / 3))
    vals = rng.standard_normal(g.n) * 1e-7 + np.pi
    export_field(g, vals, tmp_path / "r.csv")
    ids, coords, back = read_field_csv(tmp_path / "r.csv")
    assert back.tobytes() == vals.tobytes()
    assert coords.tobytes() == np.ascontiguousarray(g.vertices).tobytes()
    np.testing.assert_array_equal(ids, np.arange(g.n))


def test_simulate_3d_and_determinism(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "sim.ini", """
[job]
seed = 7
[mesh]
cells = 5,4,3
spacing = 0.5
[model]
kappa = 1.0
alpha = 2
[output]
path = sim.csv
summary = sim.json
""")
    assert main(["simulate", cfg]) == 0
    out = capsys.readouterr().out
    assert "chebyshev_degree" in out and "n: 120" in out
    first = (tmp_path / "sim.csv").read_bytes()
    assert main(["simulate", cfg]) == 0
    assert (tmp_path / "sim.csv").read_bytes() == first
    summary = json.loads((tmp_path / "sim.json").read_text())
    assert summary["seed"] == 7 and summary["n"] == 120
    assert main(["simulate", cfg, "--job.seed=8"]) == 0
    assert (tmp_path / "sim.csv").read_bytes() != first
    assert main(["simulate", cfg, "--output.format=vtk", "--output.path=sim.vtk"]) == 0
    assert "CELL_TYPES 360" in (tmp_path / "sim.vtk").read_text()


def test_krige_condsim_loglik(tmp_path, capsys):
    obs_file(tmp_path)
    (tmp_path / "targets.csv").write_text("x,y\n1.0,1.0\n2.5,3.5\n")
    base = """
[mesh]
cells = 12,12
spacing = 0.5
[anisotropy]
source = constant
ranges = 2,1
angle = 30
[model]
coefficients = 1,2,1
tau2 = 0.01
[data]
observations = obs.csv
targets = targets.csv
[solver]
tol = 1e-10
[output]
path = out.csv
"""
    cfg = write_cfg(tmp_path / "k.ini", base)
    assert main(["krige", cfg]) == 0
    out = capsys.readouterr().out
    assert "iterations" in out and "q: 2" in out
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[0] == "x,y,value" and len(lines) == 3
    assert main(["condsim", cfg]) == 0
    _, _, vals = read_field_csv(tmp_path / "out.csv")
    assert vals.shape == (169,)
    assert main(["loglik", cfg, "--likelihood.probes=5"]) == 0
    assert "loglik" in capsys.readouterr().out


def test_fit_and_covcurve(tmp_path, capsys):
    obs_file(tmp_path, n=40)
    cfg = write_cfg(tmp_path / "f.ini", """
[mesh]
cells = 6,6
[model]
coefficients = 1
[data]
observations = obs.csv
[fit]
restarts = 1
maxiter = 20
phase_probes = 1,2
tau2_start = 1
[likelihood]
degree = 32
[output]
path = fit.json
""")
    assert main(["fit", cfg]) == 0
    res = json.loads((tmp_path / "fit.json").read_text())
    assert res["tau2"] > 0 and len(res["P"]) <= 4
    cc = write_cfg(tmp_path / "c.ini", """
[model]
coefficients = 1,-0.75,-0.75,1
[covcurve]
dim = 2
grid = 256
normalize = true
[output]
path = curve.csv
""")
    assert main(["covcurve", cc]) == 0
    rows = (tmp_path / "curve.csv").read_text().splitlines()
    assert rows[0] == "lag,value" and float(rows[1].split(",")[1]) == 1.0


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "none.ini")]) == 2
    bad = write_cfg(tmp_path / "b.ini", "[mesh]\ncells = 2,2\n")
    assert main(["simulate", bad]) == 2  # no model
    assert main(["simulate", bad, "--model.coefficients=1"]) == 0
    assert main(["simulate", bad, "--model.coefficients=1", "oops"]) == 2
    assert main(["simulate", bad, "--model.coefficients=1", "--mesh.cells=0,2"]) == 2
    assert main(["simulate", bad, "--model.coefficients=1", "--mesh.spacing=-1"]) == 2
    both = write_cfg(tmp_path / "c.ini", "[mesh]\ncells = 2,2\nfile = m.off\n[model]\ncoefficients = 1\n")
    assert main(["simulate", both]) == 2
    (tmp_path / "obs.csv").write_text("x,y,value\n0.5,0.5\n")
    io = write_cfg(tmp_path / "io.ini", "[mesh]\ncells = 2,2\n[model]\ncoefficients = 1\n[data]\nobservations = obs.csv\n")
    assert main(["krige", io]) == 3
    (tmp_path / "obs.csv").write_text("x,y,value\n9,9,1\n")
    assert main(["krige", io]) == 5  # outside the domain
    (tmp_path / "obs.csv").write_text("x,y,value\n0.5,0.5,1\n")
    assert main(["krige", io, "--solver.tol=1e-15", "--solver.maxit=1"]) == 4
    neg = write_cfg(tmp_path / "n.ini", "[mesh]\ncells = 2,2\n[model]\ncoefficients = -1\n")
    assert main(["simulate", neg]) == 5
    err = capsys.readouterr().err
    assert "error [config]" in err and "error [io]" in err and "error [solver]" in err


def test_read_observations_requires_header(tmp_path):
    from riemgrf.errors import ParseError

    (tmp_path / "o.csv").write_text("0.5,0.5,1\n")
    with pytest.raises(ParseError):
        read_observations(tmp_path / "o.csv", 2)


def test_inline_comments_in_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.ini",
                    "[job]\nseed = 7 ; fixed\n[mesh]\ncells = 3, 3 ; grid\nspacing = 0.5\n"
                    "[model]\nkappa = 1.0 ; range\nalpha = 2\n[output]\npath = f.csv\n")
    assert main(["simulate", cfg]) == 0
    out = capsys.readouterr().out
    assert "seed: 7" in out and "n: 16" in out
