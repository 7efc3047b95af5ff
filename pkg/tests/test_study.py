import math

import numpy as np
import pytest

from ensemble_hdg.discretization import Discretization
from ensemble_hdg.errors import ErrorAccumulator, l2_norm_squared
from ensemble_hdg.io import (load_config, problem_from_config,
                             read_convergence_csv, snapshot_values,
                             write_convergence_csv, write_snapshot_csv,
                             write_snapshot_vtk)
from ensemble_hdg.mesh import build_uniform_square_mesh
from ensemble_hdg.problems import example1, example3
from ensemble_hdg.solver import EnsembleSolver, initialize
from ensemble_hdg.study import (ConvergenceTable, convergence_study,
                                observed_rates, resolve_dt_rule, run_level,
                                snap_dt)


def test_observed_rates_synthetic():
    """E_l = 2^(-p l) must give the rate exactly p."""
    for p in (1.0, 2.0, 3.0):
        errs = [2.0 ** (-p * level) for level in range(1, 6)]
        rates = observed_rates(errs)
        assert np.abs(rates - p).max() < 1e-13


def test_snap_dt_properties():
    # never increases dt
    for T, dtr in ((1.0, 0.3), (1.0, math.sqrt(2) / 8), (0.1, 0.004),
                   (2.0, 0.5)):
        dt = snap_dt(T, dtr)
        n = T / dt
        assert abs(n - round(n)) < 1e-9
        assert dt <= dtr * (1 + 1e-9)
        assert (dtr - dt) / dtr < 1.0 / round(n) + 1e-12
    # exact divisions stay put
    assert snap_dt(1.0, 0.25) == 0.25
    with pytest.raises(ValueError):
        snap_dt(1.0, 0.0)


def test_resolve_dt_rule():
    h = math.sqrt(2) / 8
    assert resolve_dt_rule("h", h, 1.0) == snap_dt(1.0, h)
    assert resolve_dt_rule("h3", h, 1.0) == snap_dt(1.0, h ** 3)
    assert resolve_dt_rule("fixed=0.02", h, 1.0) == 0.02
    assert resolve_dt_rule(0.25, h, 1.0) == 0.25
    with pytest.raises(ValueError):
        resolve_dt_rule("h2", h, 1.0)


def test_constant_mismatch_norm(mesh2):
    """A constant offset delta on one element contributes
    delta * sqrt(element area)."""
    disc = Discretization(mesh2, 0)
    vals = np.zeros((mesh2.n_elements, len(disc.w_data)))
    vals[3] = 0.5
    got = math.sqrt(l2_norm_squared(disc, vals))
    want = 0.5 * math.sqrt(disc.geom.det[3] / 2)
    assert abs(got - want) < 1e-14


def test_error_accumulator_exact_discrete_solution(mesh2):
    """Polynomial exact solution: all error metrics at rounding level."""
    import numpy as np

    from ensemble_hdg.solver import Member, ProblemSpec

    c = lambda x, y, t: np.full_like(x, 2.0)
    beta = lambda x, y, t: np.stack([np.full_like(x, 0.1),
                                     np.full_like(x, -0.4)], -1)
    u_ex = lambda x, y, t: (1 + 2 * t) * (x - y)
    q_ex = lambda x, y, t: np.stack([np.full_like(x, -(1 + 2 * t) / 2.0),
                                     np.full_like(x, (1 + 2 * t) / 2.0)], -1)
    f = lambda x, y, t: 2 * (x - y) + (1 + 2 * t) * (0.1 - (-0.4))
    spec = ProblemSpec([Member(c, beta, f, u_ex,
                               lambda x, y: u_ex(x, y, 0.0), u_ex, q_ex)])
    disc = Discretization(mesh2, 1)
    dt = 0.25
    solver = EnsembleSolver(disc, spec, dt=dt, tau=1.5)
    acc = ErrorAccumulator(disc, spec, dt, final_step=4)
    solver.run(1.0, observers=[acc])
    res = acc.results()
    assert res["Eu"][0] < 1e-12
    assert res["Eq"][0] < 1e-11
    # u* reproduces the degree <= k+1 exact pair as well
    assert res["Eustar"][0] < 1e-11


def test_error_norm_quadrature_convergence():
    """The data-rule norm converges fast to an order-raised reference."""
    from ensemble_hdg.basis import triangle_quadrature
    from ensemble_hdg.mesh import batched_geometry

    f = lambda x, y: np.sin(3 * x) * np.sin(2 * y)
    rel = []
    for n in (4, 16):
        mesh = build_uniform_square_mesh(n)
        disc = Discretization(mesh, 1)
        X = disc.X_data
        got = math.sqrt(l2_norm_squared(disc, f(X[..., 0], X[..., 1])))
        rule = triangle_quadrature(16)
        g = batched_geometry(mesh)
        Xr = np.einsum("eij,qj->eqi", g.jacobian, rule.points) + \
            g.corners[:, None, 0, :]
        ref = math.sqrt(np.einsum("e,q,eq->", g.det, rule.weights,
                                  f(Xr[..., 0], Xr[..., 1]) ** 2))
        rel.append(abs(got - ref) / ref)
    assert rel[0] < 1e-6
    assert rel[1] < 1e-10  # order-6 rule converges much faster than O(h^2)


def test_convergence_table_rates_and_csv(tmp_path):
    table = ConvergenceTable(0, "h", 1.0)
    table.add_level(1, {"Eq": np.array([0.4]), "Eu": np.array([0.2]),
                        "Eustar": np.array([0.1])})
    table.add_level(2, {"Eq": np.array([0.2]), "Eu": np.array([0.05]),
                        "Eustar": np.array([0.0125])})
    assert table.final_rate(1, "Eq") == pytest.approx(1.0)
    assert table.final_rate(1, "Eu") == pytest.approx(2.0)
    assert table.final_rate(1, "Eustar") == pytest.approx(3.0)
    path = tmp_path / "table.csv"
    write_convergence_csv(table, path)
    rows = read_convergence_csv(path)
    assert rows[0]["Eq_rate"] is None
    assert rows[1]["Eu_rate"] == pytest.approx(2.0)
    assert rows[1]["h_over_sqrt2"] == 0.25


def test_empty_table_round_trip(tmp_path):
    table = ConvergenceTable(1, "h3", 1.0)
    path = tmp_path / "empty.csv"
    write_convergence_csv(table, path)
    assert path.read_text().strip() == ",".join(ConvergenceTable.COLUMNS)
    assert read_convergence_csv(path) == []
    bad = tmp_path / "bad.csv"
    bad.write_text("level,other\n")
    with pytest.raises(ValueError):
        read_convergence_csv(bad)


def test_convergence_study_small_runs_deterministically(tmp_path):
    problem = example1()
    table1 = convergence_study(problem, 0, [1, 2], "h")
    table2 = convergence_study(problem, 0, [1, 2], "h")
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_convergence_csv(table1, p1)
    write_convergence_csv(table2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert len(table1.rows) == 6
    # errors decrease with refinement for every member
    for j in (1, 2, 3):
        col = table1.column(j, "Eu")
        assert col[1] < col[0]


def test_convergence_study_requires_exact():
    with pytest.raises(ValueError, match="exact"):
        convergence_study(example3(), 0, [1], "h")


def test_run_level_metadata():
    errors, info, state = run_level(example1(), 2, 0, 0.25, 1.0)
    assert info["steps"] == 4
    assert info["factorizations"] == 1
    # n = 2: 3 n^2 - 2 n = 8 interior faces, one DOF each at k = 0
    assert info["trace_dofs"] == 8
    assert state.n == 4


def test_snapshot_outputs(tmp_path, mesh2):
    problem = example1()
    disc = Discretization(mesh2, 1)
    solver = EnsembleSolver(disc, problem, dt=0.5)
    state = solver.run(1.0)
    pts, u, ustar = snapshot_values(disc, state)
    assert pts.shape == (mesh2.n_elements, 4, 2)
    assert u.shape == (3, mesh2.n_elements, 4)

    csv_path = tmp_path / "snap.csv"
    write_snapshot_csv(disc, state, csv_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "member,element,x,y,u"
    assert len(lines) == 1 + 3 * mesh2.n_elements * 4

    vtk_path = tmp_path / "snap.vtk"
    write_snapshot_vtk(disc, state, vtk_path)
    text = vtk_path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    npts = int(text[4].split()[1])
    assert npts == 3 * mesh2.n_elements
    assert any(line.startswith("SCALARS u3") for line in text)


def test_config_round_trip(tmp_path):
    """An example-3-shaped custom problem survives the config format."""
    cfg_text = """
[run]
degree = 1
levels = 1..2
dt_rule = fixed=0.01
T = 0.1
strict_admissibility = false

[custom]
J = 3
c = 60, 120, 180
beta_x = 2, 3, 4
beta_y = 3, 4, 5
f = 2, 5, 8
T = 0.1
"""
    path = tmp_path / "run.ini"
    path.write_text(cfg_text)
    cfg = load_config(path)
    assert cfg["degree"] == 1
    assert cfg["custom"]["c"] == [60.0, 120.0, 180.0]
    problem = problem_from_config(cfg)
    assert problem.J == 3
    x = np.array([0.5])
    got = problem.members[2].beta(x, x, 0.0)
    assert got[0, 0] == 4.0 and got[0, 1] == 5.0
    assert problem.members[1].f(x, x, 0.0)[0] == 5.0
