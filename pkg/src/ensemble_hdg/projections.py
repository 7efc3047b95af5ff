"""Element and face L2 projections and the HDG projection.

All projections are local (per element or per face), assembled with
quadrature against the orthonormal reference bases and solved densely.
The HDG projection couples the flux and scalar moments with the face
moments of the numerical flux; it is shipped as a verification oracle,
the solver itself initializes from the plain degree-(k+1) L2 projection.
"""

import numpy as np

from .basis import ElementBasis, FaceBasis, edge_quadrature, triangle_quadrature
from .mesh import batched_geometry

_REF_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class ProjectedField:
    """Per-element coefficients of a projected field.

    coeffs has shape (ne, dim) for scalars and (ne, 2, dim) for vector
    fields, in the orthonormal reference basis of the tagged degree.
    """

    def __init__(self, coeffs, degree):
        self.coeffs = coeffs
        self.degree = degree

    @property
    def is_vector(self):
        return self.coeffs.ndim == 3


def _element_points(mesh, rule):
    geom = batched_geometry(mesh)
    X = np.einsum("eij,qj->eqi", geom.jacobian, rule.points)
    X += geom.corners[:, None, 0, :]
    return X


def l2_project_element(fn, mesh, degree, quad_order=None):
    """L2-project fn(x, y) onto discontinuous P^degree over the mesh.

    fn must be vectorized; a scalar field returns arrays shaped like x,
    a vector field returns shape x.shape + (2,).
    """
    rule = triangle_quadrature(quad_order or 2 * degree + 4)
    basis = ElementBasis(degree)
    V = basis.eval(rule.points)
    X = _element_points(mesh, rule)
    vals = np.asarray(fn(X[..., 0].ravel(), X[..., 1].ravel()), dtype=float)
    # reference mass matrix; detJ cancels between mass and moment vector
    mass = (V * rule.weights) @ V.T
    if vals.ndim == 2 and vals.shape[-1] == 2:
        vals = vals.reshape(X.shape[:2] + (2,))
        mom = np.einsum("q,eqi,dq->eid", rule.weights, vals, V)
        coeffs = np.linalg.solve(mass[None], mom.transpose(0, 2, 1))
        return ProjectedField(coeffs.transpose(0, 2, 1), degree)
    vals = vals.reshape(X.shape[:2])
    mom = np.einsum("q,eq,dq->ed", rule.weights, vals, V)
    coeffs = np.linalg.solve(mass[None], mom[..., None])[..., 0]
    return ProjectedField(coeffs, degree)


def l2_project_face(fn, mesh, degree, quad_order=None):
    """L2-project a trace fn(x, y) onto P^degree on every mesh face.

    Returns (nf, degree+1) coefficients in each face's canonical
    parametrization.
    """
    rule = edge_quadrature(quad_order or 2 * degree + 4)
    basis = FaceBasis(degree)
    Psi = basis.eval(rule.points)
    va = mesh.vertices[mesh.faces[:, 0]]
    vb = mesh.vertices[mesh.faces[:, 1]]
    X = va[:, None, :] + rule.points[None, :, None] * (vb - va)[:, None, :]
    vals = np.asarray(fn(X[..., 0].ravel(), X[..., 1].ravel()),
                      dtype=float).reshape(X.shape[:2])
    mass = (Psi * rule.weights) @ Psi.T
    mom = np.einsum("q,fq,dq->fd", rule.weights, vals, Psi)
    return np.linalg.solve(mass[None], mom[..., None])[..., 0]


def projected_values(field, mesh, points_ref, elems=None):
    """Evaluate a ProjectedField at reference points (per element)."""
    basis = ElementBasis(field.degree)
    V = basis.eval(points_ref)
    c = field.coeffs if elems is None else field.coeffs[elems]
    if field.is_vector:
        return np.einsum("eid,dq->eqi", c, V)
    return np.einsum("ed,dq->eq", c, V)


class HDGProjectionError(RuntimeError):
    pass


def hdg_project(q_fn, u_fn, mesh, beta_fn, tau, degree, quad_order=None):
    """HDG projection of a flux/scalar pair (q, u).

    Per element the projected pair matches the volume moments of
    q + beta*u against [P^(k-1)]^2, the volume moments of u against
    P^(k-1), and the face moments of q.n + (beta.n + tau) u against
    P^k on every face.  For k = 0 only the face moments apply.

    Parameters
    ----------
    q_fn, u_fn : callables (x, y) -> values
        Vector and scalar fields; q_fn returns shape x.shape + (2,).
    beta_fn : callable (x, y) -> vector values
    tau : float or (ne,) array
        Positive stabilization constant(s).
    degree : int
        Polynomial degree k >= 0.

    Returns
    -------
    (ProjectedField, ProjectedField)
        Vector and scalar components of the projection.
    """
    k = degree
    if np.any(np.asarray(tau) <= 0):
        raise ValueError("hdg_project requires tau > 0")
    geom = batched_geometry(mesh)
    ne = mesh.n_elements
    basis = ElementBasis(k)
    d = basis.dim
    dlo = k * (k + 1) // 2  # dim P^(k-1); leading block of the graded basis
    fbasis = FaceBasis(k)
    nfd = fbasis.dim

    erule = triangle_quadrature(quad_order or 2 * k + 4)
    frule = edge_quadrature(quad_order or 2 * k + 4)
    V = basis.eval(erule.points)        # (d, nq)
    Psi = fbasis.eval(frule.points)     # (nfd, nqf)
    s = frule.points
    refpts = np.concatenate([
        _REF_CORNERS[i][None] + s[:, None] *
        (_REF_CORNERS[(i + 1) % 3] - _REF_CORNERS[i])[None]
        for i in range(3)
    ])
    Vf = basis.eval(refpts).reshape(d, 3, len(s))  # local-face traversal

    X = _element_points(mesh, erule)
    corners = geom.corners
    Xf = np.stack([
        corners[:, i, None, :] + s[None, :, None] *
        (corners[:, (i + 1) % 3] - corners[:, i])[:, None, :]
        for i in range(3)
    ], axis=1)  # (ne, 3, nqf, 2)

    qv = np.asarray(q_fn(X[..., 0].ravel(), X[..., 1].ravel()),
                    dtype=float).reshape(ne, -1, 2)
    uv = np.asarray(u_fn(X[..., 0].ravel(), X[..., 1].ravel()),
                    dtype=float).reshape(ne, -1)
    bv = np.asarray(beta_fn(X[..., 0].ravel(), X[..., 1].ravel()),
                    dtype=float).reshape(ne, -1, 2)
    qf = np.asarray(q_fn(Xf[..., 0].ravel(), Xf[..., 1].ravel()),
                    dtype=float).reshape(ne, 3, -1, 2)
    uf = np.asarray(u_fn(Xf[..., 0].ravel(), Xf[..., 1].ravel()),
                    dtype=float).reshape(ne, 3, -1)
    bf = np.asarray(beta_fn(Xf[..., 0].ravel(), Xf[..., 1].ravel()),
                    dtype=float).reshape(ne, 3, -1, 2)

    tau_e = np.broadcast_to(np.asarray(tau, dtype=float), (ne,))
    w, wf = erule.weights, frule.weights
    detJ = geom.det
    lens = geom.edge_lengths
    nrm = geom.normals

    nun = 3 * d  # unknowns: qx, qy, u
    A = np.zeros((ne, nun, nun))
    b = np.zeros((ne, nun))
    row = 0
    if k > 0:
        # volume moments of q + beta u against [P^(k-1)]^2
        Mlo = np.einsum("q,aq,bq->ab", w, V[:dlo], V)           # (dlo, d)
        for comp in range(2):
            rows = slice(row, row + dlo)
            A[:, rows, comp * d:(comp + 1) * d] = detJ[:, None, None] * Mlo
            A[:, rows, 2 * d:] = detJ[:, None, None] * np.einsum(
                "q,eq,aq,bq->eab", w, bv[..., comp], V[:dlo], V)
            b[:, rows] = detJ[:, None] * np.einsum(
                "q,eq,aq->ea", w, qv[..., comp] + bv[..., comp] * uv, V[:dlo])
            row += dlo
        # volume moments of u against P^(k-1)
        rows = slice(row, row + dlo)
        A[:, rows, 2 * d:] = detJ[:, None, None] * Mlo
        b[:, rows] = detJ[:, None] * np.einsum("q,eq,aq->ea", w, uv, V[:dlo])
        row += dlo
    # face moments of q.n + (beta.n + tau) u against P^k(e)
    for lf in range(3):
        rows = slice(row, row + nfd)
        ln = lens[:, lf]
        bn = np.einsum("eqi,ei->eq", bf[:, lf], nrm[:, lf])
        wgt = bn + tau_e[:, None]
        for comp in range(2):
            A[:, rows, comp * d:(comp + 1) * d] = np.einsum(
                "e,q,mq,bq->emb", ln * nrm[:, lf, comp], wf, Psi, Vf[:, lf])
        A[:, rows, 2 * d:] = np.einsum(
            "e,q,eq,mq,bq->emb", ln, wf, wgt, Psi, Vf[:, lf])
        qn = np.einsum("eqi,ei->eq", qf[:, lf], nrm[:, lf])
        b[:, rows] = np.einsum("e,q,eq,mq->em", ln, wf,
                               qn + wgt * uf[:, lf], Psi)
        row += nfd
    assert row == nun

    try:
        sol = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        ranks = np.linalg.matrix_rank(A)
        bad = int(np.argmax(ranks < nun))
        raise HDGProjectionError(
            f"singular HDG projection system on element {bad}") from None
    qc = np.stack([sol[:, :d], sol[:, d:2 * d]], axis=1)
    return ProjectedField(qc, k), ProjectedField(sol[:, 2 * d:], k)
