import numpy as np
import pytest

from ensemble_hdg.mesh import (Mesh, batched_geometry,
                               build_uniform_square_mesh, element_geometry,
                               read_mesh_text, write_mesh_text)


def test_single_cell_split():
    m = build_uniform_square_mesh(1)
    assert m.n_elements == 2
    assert m.n_vertices == 4
    assert m.n_faces == 5
    assert m.n_interior_faces == 1


def test_paper_scale_element_count():
    m = build_uniform_square_mesh(256)
    assert m.n_elements == 131072
    assert abs(m.h_max - np.sqrt(2) / 256) < 1e-15


def test_structured_counts_and_euler():
    m = build_uniform_square_mesh(4)
    assert m.n_elements == 32
    assert m.n_vertices == 25
    assert m.n_faces == 56
    assert m.n_vertices - m.n_faces + m.n_elements == 1


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_mesh_invariants(n):
    m = build_uniform_square_mesh(n)
    assert abs(m.h_max - np.sqrt(2) / n) < 1e-15
    assert abs(m.element_areas().sum() - 1.0) < 1e-14
    # interior faces have two elements, boundary faces one
    interior = ~m.boundary
    assert np.all(m.face_elements[interior, 1] >= 0)
    assert np.all(m.face_elements[m.boundary, 1] == -1)
    assert m.n_vertices - m.n_faces + m.n_elements == 1
    # adjacency is an involution
    for f in range(m.n_faces):
        for side in range(2):
            e, lf = m.face_elements[f, side], m.face_local[f, side]
            if e >= 0:
                assert m.elem_faces[e, lf] == f


def test_rejects_invalid_input():
    with pytest.raises(ValueError):
        build_uniform_square_mesh(0)
    # clockwise element
    with pytest.raises(ValueError):
        Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
             np.array([[0, 2, 1]]))


def test_shared_face_normals_negate(mesh2):
    g = batched_geometry(mesh2)
    for f in np.nonzero(~mesh2.boundary)[0]:
        (e0, e1), (l0, l1) = mesh2.face_elements[f], mesh2.face_local[f]
        assert np.abs(g.normals[e0, l0] + g.normals[e1, l1]).max() == 0.0


def test_canonical_orientation_matches_owner(mesh4):
    g = batched_geometry(mesh4)
    for f in range(mesh4.n_faces):
        e0, l0 = mesh4.face_elements[f, 0], mesh4.face_local[f, 0]
        e1 = mesh4.face_elements[f, 1]
        if e1 >= 0:
            assert e0 < e1  # owner is the lower element index
        va, vb = mesh4.vertices[mesh4.faces[f]]
        t = vb - va
        nrm = np.array([t[1], -t[0]]) / np.hypot(*t)
        assert np.abs(nrm - g.normals[e0, l0]).max() < 1e-14


def test_element_geometry_reference_triangle(reference_triangle_mesh):
    geo = element_geometry(reference_triangle_mesh, 0)
    assert abs(geo.area - 0.5) < 1e-15
    assert abs(geo.det - 1.0) < 1e-15
    # hypotenuse (local face 1) normal
    s = 1 / np.sqrt(2.0)
    assert np.abs(geo.normals[1] - [s, s]).max() < 1e-15
    lengths = np.linalg.norm(geo.normals, axis=1)
    assert np.abs(lengths - 1.0).max() < 1e-14


def test_element_geometry_uniform_areas(mesh2):
    for ie in range(mesh2.n_elements):
        assert abs(element_geometry(mesh2, ie).area - 1 / 8) < 1e-15
    with pytest.raises(IndexError):
        element_geometry(mesh2, mesh2.n_elements)


def test_mesh_text_roundtrip(tmp_path, mesh4):
    path = tmp_path / "square.mesh"
    write_mesh_text(mesh4, path)
    back = read_mesh_text(path)
    assert np.array_equal(back.vertices, mesh4.vertices)
    assert np.array_equal(back.elements, mesh4.elements)
    assert np.array_equal(back.boundary, mesh4.boundary)


def test_mesh_text_validates_faces(tmp_path, mesh2):
    path = tmp_path / "bad.mesh"
    write_mesh_text(mesh2, path)
    lines = path.read_text().splitlines()
    # flip a boundary flag on the last face line
    last = lines[-1].split()
    last[2] = "0" if last[2] == "1" else "1"
    lines[-1] = " ".join(last)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        read_mesh_text(path)


def test_locate_points_roundtrip(mesh4, rng):
    pts = rng.random((200, 2))
    elem, ref = mesh4.locate_points(pts)
    g = batched_geometry(mesh4)
    back = g.corners[elem, 0] + np.einsum("eij,ej->ei", g.jacobian[elem], ref)
    assert np.abs(back - pts).max() < 1e-13
    assert np.all(ref >= -1e-12)
    assert np.all(ref.sum(axis=1) <= 1 + 1e-12)
