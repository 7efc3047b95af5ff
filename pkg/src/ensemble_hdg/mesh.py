"""Conforming triangular meshes of the unit square with face connectivity.

A mesh stores vertices, counter-clockwise elements, a canonical face list and
the element/face adjacency needed by hybrid methods: every interior face knows
its two incident elements, every boundary face its single one.  Meshes are
immutable after construction and safe for concurrent reads.
"""

import numpy as np

_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class Mesh:
    """Triangulation with face connectivity and boundary classification.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array
        Vertex indices, counter-clockwise.
    faces : (nf, 2) int array
        Vertex pairs in canonical orientation: as traversed by the incident
        element with the lower index, so the stored direction's right-hand
        normal is that element's outward normal.
    face_elements : (nf, 2) int array
        Incident element indices; column 1 is -1 on boundary faces.
    face_local : (nf, 2) int array
        Local face index (0..2) of this face within each incident element.
    elem_faces : (ne, 3) int array
        Global face index of each local face.
    boundary : (nf,) bool array
    h_max : float
        Maximum element diameter.
    """

    def __init__(self, vertices, elements, uniform_n=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be (nv, 2)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise ValueError("elements must be (ne, 3)")
        v = self.vertices[self.elements]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        signed = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(signed <= 0):
            bad = int(np.argmax(signed <= 0))
            raise ValueError(f"element {bad} is not counter-clockwise")
        self._signed_areas = 0.5 * signed
        self.uniform_n = uniform_n
        self._build_faces()
        edges = v - np.roll(v, -1, axis=1)
        self.h_max = float(np.sqrt((edges ** 2).sum(-1)).max())

    def _build_faces(self):
        ne = len(self.elements)
        pairs = np.concatenate(
            [self.elements[:, e] for e in _LOCAL_EDGES], axis=0
        )
        keys = np.sort(pairs, axis=1)
        faces_sorted, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts > 2):
            raise ValueError("non-conforming mesh: a face has > 2 elements")
        nf = len(faces_sorted)
        owner_elem = np.tile(np.arange(ne), 3)
        owner_local = np.repeat(np.arange(3), ne)

        face_elements = np.full((nf, 2), -1, dtype=np.int64)
        face_local = np.full((nf, 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        _, first = np.unique(inverse[order], return_index=True)
        e0 = owner_elem[order[first]]
        l0 = owner_local[order[first]]
        face_elements[:, 0] = e0
        face_local[:, 0] = l0
        two = counts == 2
        e1 = owner_elem[order[first[two] + 1]]
        l1 = owner_local[order[first[two] + 1]]
        face_elements[two, 1] = e1
        face_local[two, 1] = l1
        # owner = lower element index defines the canonical orientation
        swap = two & (face_elements[:, 1] < face_elements[:, 0])
        face_elements[swap] = face_elements[swap][:, ::-1]
        face_local[swap] = face_local[swap][:, ::-1]

        own, loc = face_elements[:, 0], face_local[:, 0]
        a = self.elements[own, loc]
        b = self.elements[own, (loc + 1) % 3]
        self.faces = np.column_stack([a, b])
        self.face_elements = face_elements
        self.face_local = face_local
        self.boundary = counts == 1

        elem_faces = np.empty((ne, 3), dtype=np.int64)
        for side in range(2):
            ok = face_elements[:, side] >= 0
            elem_faces[face_elements[ok, side], face_local[ok, side]] = \
                np.nonzero(ok)[0]
        self.elem_faces = elem_faces

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_interior_faces(self):
        return int((~self.boundary).sum())

    def element_areas(self):
        return self._signed_areas.copy()

    def content_token(self):
        """Hashable token identifying the mesh content (for fingerprints)."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.elements.tobytes())
        return h.hexdigest()

    def locate_points(self, points):
        """Map physical points to (element index, reference coords).

        Only available for meshes built by `build_uniform_square_mesh`;
        points must lie in [0, 1]^2.
        """
        if self.uniform_n is None:
            raise NotImplementedError("point location needs a uniform mesh")
        n = self.uniform_n
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ix = np.clip((pts[:, 0] * n).astype(int), 0, n - 1)
        iy = np.clip((pts[:, 1] * n).astype(int), 0, n - 1)
        fx = pts[:, 0] * n - ix
        fy = pts[:, 1] * n - iy
        # cells split along the (0,0)->(1,1) diagonal: lower means fy <= fx
        lower = fy <= fx
        elem = 2 * (iy * n + ix) + np.where(lower, 0, 1)
        # lower triangle (ll, lr, ur): xi = fx - fy, eta = fy
        # upper triangle (ll, ur, ul): xi = fx, eta = fy - fx
        xi = np.where(lower, fx - fy, fx)
        eta = np.where(lower, fy, fy - fx)
        return elem, np.column_stack([xi, eta])


def build_uniform_square_mesh(n):
    """Uniform triangulation of [0, 1]^2 with n subdivisions per side.

    Each grid cell is split into two triangles along its lower-left to
    upper-right diagonal, giving 2 n^2 elements and h_max = sqrt(2)/n.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    coords = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(coords, coords)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    ix, iy = np.meshgrid(np.arange(n), np.arange(n))
    ix, iy = ix.ravel(), iy.ravel()
    ll = iy * (n + 1) + ix
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper
    return Mesh(vertices, elements, uniform_n=n)


class ElementGeometry:
    """Affine map data for one element.

    jacobian columns are the edge vectors from vertex 0; det = 2 * area;
    normals[i] is the outward unit normal of local face i.
    """

    def __init__(self, vertices, jacobian, det, inv_t, normals, edge_lengths):
        self.vertices = vertices
        self.jacobian = jacobian
        self.det = det
        self.inv_t = inv_t
        self.normals = normals
        self.edge_lengths = edge_lengths

    @property
    def area(self):
        return 0.5 * self.det


def element_geometry(mesh, ie):
    """Affine map, normals and edge lengths of element `ie`."""
    if not 0 <= ie < mesh.n_elements:
        raise IndexError(f"element index {ie} out of range")
    g = batched_geometry(mesh)
    return ElementGeometry(
        mesh.vertices[mesh.elements[ie]], g.jacobian[ie], g.det[ie],
        g.inv_t[ie], g.normals[ie], g.edge_lengths[ie],
    )


class BatchedGeometry:
    """Geometry arrays for all elements at once (see ElementGeometry)."""

    def __init__(self, mesh):
        v = mesh.vertices[mesh.elements]
        self.corners = v
        B = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
        self.jacobian = B
        self.det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        inv = np.empty_like(B)
        inv[:, 0, 0] = B[:, 1, 1]
        inv[:, 0, 1] = -B[:, 0, 1]
        inv[:, 1, 0] = -B[:, 1, 0]
        inv[:, 1, 1] = B[:, 0, 0]
        inv /= self.det[:, None, None]
        self.inv = inv
        self.inv_t = np.swapaxes(inv, 1, 2)
        tang = np.stack([v[:, (i + 1) % 3] - v[:, i] for i in range(3)], axis=1)
        self.edge_lengths = np.sqrt((tang ** 2).sum(-1))
        # CCW element: outward normal is the tangent rotated clockwise
        self.normals = np.stack(
            [tang[..., 1], -tang[..., 0]], axis=-1
        ) / self.edge_lengths[..., None]


def batched_geometry(mesh):
    g = getattr(mesh, "_geometry_cache", None)
    if g is None:
        g = BatchedGeometry(mesh)
        mesh._geometry_cache = g
    return g


def write_mesh_text(mesh, path):
    """Write the plain-text mesh format: "nv ne nf" header, "x y" vertex
    lines, "v0 v1 v2" element lines, "v0 v1 b" face lines (b = boundary)."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_elements} {mesh.n_faces}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.elements:
            fh.write(f"{a} {b} {c}\n")
        for (a, b), bnd in zip(mesh.faces, mesh.boundary):
            fh.write(f"{a} {b} {int(bnd)}\n")


def read_mesh_text(path):
    """Read the plain-text mesh format; validates the declared face list."""
    with open(path) as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    try:
        nv, ne, nf = int(next(it)), int(next(it)), int(next(it))
        vertices = np.array(
            [[float(next(it)), float(next(it))] for _ in range(nv)]
        )
        elements = np.array(
            [[int(next(it)) for _ in range(3)] for _ in range(ne)]
        )
        declared = np.array(
            [[int(next(it)) for _ in range(3)] for _ in range(nf)]
        )
    except StopIteration:
        raise ValueError(f"truncated mesh file {path}") from None
    mesh = Mesh(vertices, elements)
    if mesh.n_faces != nf:
        raise ValueError(
            f"mesh file declares {nf} faces, connectivity builds {mesh.n_faces}"
        )
    key = {tuple(sorted(f)): bool(b) for *f, b in declared.tolist()}
    for f, bnd in zip(mesh.faces, mesh.boundary):
        want = key.get(tuple(sorted(f)))
        if want is None:
            raise ValueError(f"face {tuple(f)} missing from mesh file")
        if want != bool(bnd):
            raise ValueError(f"face {tuple(f)} has wrong boundary flag")
    return mesh
