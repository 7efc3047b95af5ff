"""File outputs (convergence CSV, field snapshots, VTK) and config files.

CSV output is deterministic: fixed column order, repr-style float
formatting and no timestamps, so identical configurations produce
byte-identical files.
"""

import configparser
import csv

import numpy as np

from .study import ConvergenceTable


def write_convergence_csv(table, path):
    """Write a ConvergenceTable in the documented CSV layout.

    Columns: level,h_over_sqrt2,member,Eq,Eq_rate,Eu,Eu_rate,Eustar,
    Eustar_rate with empty rate cells on the first level.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ConvergenceTable.COLUMNS)
        for row in table.rows:
            out = []
            for col in ConvergenceTable.COLUMNS:
                v = row[col]
                if v is None:
                    out.append("")
                elif col in ("level", "member"):
                    out.append(str(int(v)))
                else:
                    out.append(repr(float(v)))
            writer.writerow(out)


def read_convergence_csv(path):
    """Parse the convergence CSV back into a list of row dicts."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                tuple(reader.fieldnames) != ConvergenceTable.COLUMNS:
            raise ValueError(f"unexpected CSV header in {path}")
        for rec in reader:
            row = {}
            for col in ConvergenceTable.COLUMNS:
                raw = rec[col]
                if raw == "":
                    row[col] = None
                elif col in ("level", "member"):
                    row[col] = int(raw)
                else:
                    row[col] = float(raw)
            rows.append(row)
    return rows


_SNAP_REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
                      [1 / 3, 1 / 3]])


def snapshot_values(disc, state, postprocessed=None):
    """Sample u (and optionally u*) at each element's vertices + centroid.

    Returns (points (ne, 4, 2), u (J, ne, 4), ustar (J, ne, 4) or None).
    """
    geom = disc.geom
    pts = np.einsum("eij,qj->eqi", geom.jacobian, _SNAP_REF)
    pts += geom.corners[:, None, 0, :]
    if state.u_degree == disc.k:
        V = disc.elem_basis.eval(_SNAP_REF)
    else:
        V = disc.elem_basis_hi.eval(_SNAP_REF)
    u = state.u @ V
    ustar = None
    if postprocessed is not None:
        ustar = postprocessed @ disc.elem_basis_hi.eval(_SNAP_REF)
    return pts, u, ustar


def write_snapshot_csv(disc, state, path, postprocessed=None):
    """Per-element point samples of u (and u*) for plotting, as CSV."""
    pts, u, ustar = snapshot_values(disc, state, postprocessed)
    J = u.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["member", "element", "x", "y", "u"]
        if ustar is not None:
            header.append("ustar")
        writer.writerow(header)
        for j in range(J):
            for e in range(u.shape[1]):
                for p in range(4):
                    row = [str(j + 1), str(e), repr(float(pts[e, p, 0])),
                           repr(float(pts[e, p, 1])),
                           repr(float(u[j, e, p]))]
                    if ustar is not None:
                        row.append(repr(float(ustar[j, e, p])))
                    writer.writerow(row)


def write_snapshot_vtk(disc, state, path, postprocessed=None):
    """Legacy ASCII VTK POLYDATA snapshot (triangles, point scalars).

    Vertices are replicated per element so the discontinuous fields render
    faithfully; one scalar array per member (u_j, and ustar_j if given).
    """
    mesh = disc.mesh
    pts, u, ustar = snapshot_values(disc, state, postprocessed)
    ne = mesh.n_elements
    corners = pts[:, :3, :].reshape(-1, 2)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("ensemble HDG field snapshot\n")
        fh.write("ASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {3 * ne} double\n")
        for x, y in corners:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        fh.write(f"POLYGONS {ne} {4 * ne}\n")
        for e in range(ne):
            fh.write(f"3 {3 * e} {3 * e + 1} {3 * e + 2}\n")
        fh.write(f"POINT_DATA {3 * ne}\n")
        fields = [(f"u{j + 1}", u[j, :, :3]) for j in range(u.shape[0])]
        if ustar is not None:
            fields += [(f"ustar{j + 1}", ustar[j, :, :3])
                       for j in range(ustar.shape[0])]
        for name, vals in fields:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in vals.reshape(-1):
                fh.write(f"{float(v)!r}\n")


def load_config(path):
    """Read an INI-style run configuration.

    Section [run] carries the CLI options (example, degree, levels,
    dt_rule, T, out, strict_admissibility, mesh_file, snapshot); an
    optional [custom] section defines a constant-coefficient ensemble with
    keys J, c, beta_x, beta_y, f (comma-separated per-member values) and
    optional T.
    """
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    cfg = {}
    if parser.has_section("run"):
        run = parser["run"]
        for key in ("example", "degree"):
            if key in run:
                cfg[key] = run.getint(key)
        for key in ("levels", "dt_rule", "out", "mesh_file", "snapshot"):
            if key in run:
                cfg[key] = run.get(key)
        if "T" in run:
            cfg["T"] = run.getfloat("T")
        if "strict_admissibility" in run:
            cfg["strict_admissibility"] = run.getboolean(
                "strict_admissibility")
    if parser.has_section("custom"):
        sec = parser["custom"]
        vals = {k: [float(s) for s in sec.get(k).split(",")]
                for k in ("c", "beta_x", "beta_y", "f")}
        J = sec.getint("J", len(vals["c"]))
        if any(len(v) != J for v in vals.values()):
            raise ValueError("custom problem member lists disagree with J")
        cfg["custom"] = {
            "c": vals["c"],
            "beta": list(zip(vals["beta_x"], vals["beta_y"])),
            "f": vals["f"],
        }
        if "T" in sec:
            cfg["custom"]["T"] = sec.getfloat("T")
    return cfg


def problem_from_config(cfg):
    """Materialize the ensemble a config describes (custom or example)."""
    from .problems import constant_ensemble, get_example

    if "custom" in cfg:
        c = cfg["custom"]
        return constant_ensemble(c["c"], c["beta"], c["f"],
                                 default_T=c.get("T", 0.1), name="custom")
    if "example" in cfg:
        return get_example(cfg["example"])
    raise ValueError("config defines neither an example nor a custom problem")
