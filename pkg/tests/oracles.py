"""Independent reference implementations used to cross-check the solver.

These deliberately avoid the library's assembly paths: local matrices are
built by brute-force quadrature in a raw monomial basis and mapped over by
explicit change-of-basis, and the global stepper assembles the full
uncondensed saddle system densely and solves it with numpy.
"""

import numpy as np

from ensemble_hdg.basis import monomial_exponents
from ensemble_hdg.solver import EnsembleState, state_samples


def monomial_full_local_matrix(disc, ie, cbar, bbar, bbar_face, tau, dt):
    """Brute-force local matrix in the orthonormal basis.

    Every bilinear term is integrated against raw reference monomials
    (element) and raw edge monomials (faces), then converted with the
    orthonormalization matrices.  Row/column order matches LocalBlocks:
    [qx | qy | u | f0 | f1 | f2].
    """
    k = disc.k
    exps = monomial_exponents(k)
    d = len(exps)
    nfd = k + 1
    pts = disc.rule_elem.points
    w = disc.rule_elem.weights
    geom = disc.geom
    detJ = geom.det[ie]
    BinvT = geom.inv_t[ie]

    # monomial values/gradients at element quadrature points
    M = np.array([pts[:, 0] ** a * pts[:, 1] ** b for a, b in exps])
    Gx = np.array([
        a * pts[:, 0] ** max(a - 1, 0) * pts[:, 1] ** b if a else 0 * pts[:, 0]
        for a, b in exps])
    Gy = np.array([
        b * pts[:, 0] ** a * pts[:, 1] ** max(b - 1, 0) if b else 0 * pts[:, 0]
        for a, b in exps])
    GX = BinvT[0, 0] * Gx + BinvT[0, 1] * Gy
    GY = BinvT[1, 0] * Gx + BinvT[1, 1] * Gy

    s = disc.rule_face.points
    wf = disc.rule_face.weights
    Mf = np.array([s ** m for m in range(nfd)])

    # element-basis monomial values at the canonical face points: use the
    # element's aligned reference coordinates
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    Mface = []
    for lf in range(3):
        ra, rb = corners[lf], corners[(lf + 1) % 3]
        if not disc.face_aligned[ie, lf]:
            ra, rb = rb, ra
        ref = ra[None] + s[:, None] * (rb - ra)[None]
        Mface.append(np.array([ref[:, 0] ** a * ref[:, 1] ** b
                               for a, b in exps]))

    nint, ntr = 3 * d, 3 * nfd
    A = np.zeros((nint + ntr, nint + ntr))
    sl_qx, sl_qy = slice(0, d), slice(d, 2 * d)
    sl_u = slice(2 * d, 3 * d)

    def vol(weight, rows, cols):
        return detJ * np.einsum("q,iq,jq->ij", w * weight, rows, cols)

    A[sl_qx, sl_qx] = vol(cbar, M, M)
    A[sl_qy, sl_qy] = vol(cbar, M, M)
    A[sl_qx, sl_u] = -vol(1.0, GX, M)
    A[sl_qy, sl_u] = -vol(1.0, GY, M)
    A[sl_u, sl_qx] = vol(1.0, M, GX)
    A[sl_u, sl_qy] = vol(1.0, M, GY)
    A[sl_u, sl_u] = vol(1.0 / dt, M, M) + \
        vol(bbar[:, 0], M, GX) + vol(bbar[:, 1], M, GY)

    lens = geom.edge_lengths[ie]
    nrm = geom.normals[ie]
    for lf in range(3):
        ln = lens[lf]
        tr = slice(nint + lf * nfd, nint + (lf + 1) * nfd)
        Me = Mface[lf]
        bn = bbar_face[lf] @ nrm[lf]
        A[sl_u, sl_u] += tau * ln * np.einsum("q,iq,jq->ij", wf, Me, Me)
        A[sl_u, tr] = -tau * ln * np.einsum("q,iq,mq->im", wf, Me, Mf)
        A[tr, sl_u] = -tau * ln * np.einsum("q,mq,jq->mj", wf, Mf, Me) \
            - ln * np.einsum("q,q,mq,jq->mj", wf, bn, Mf, Me)
        A[tr, tr] = tau * ln * np.einsum("q,mq,lq->ml", wf, Mf, Mf)
        A[sl_qx, tr] = ln * nrm[lf, 0] * np.einsum("q,iq,mq->im", wf, Me, Mf)
        A[sl_qy, tr] = ln * nrm[lf, 1] * np.einsum("q,iq,mq->im", wf, Me, Mf)
        A[tr, sl_qx] = -ln * nrm[lf, 0] * np.einsum("q,mq,jq->mj", wf, Mf, Me)
        A[tr, sl_qy] = -ln * nrm[lf, 1] * np.einsum("q,mq,jq->mj", wf, Mf, Me)

    C = disc.elem_basis.coeffs
    Cf = disc.face_basis.coeffs
    T = np.zeros_like(A)
    T[sl_qx, sl_qx] = C
    T[sl_qy, sl_qy] = C
    T[sl_u, sl_u] = C
    for lf in range(3):
        tr = slice(nint + lf * nfd, nint + (lf + 1) * nfd)
        T[tr, tr] = Cf
    return T @ A @ T.T


def dense_global_matrix(disc, cbar, bbar, bbar_face, tau, dt,
                        assemble_local):
    """Scatter per-element full local matrices into one dense system.

    Unknown order: all interior DOFs element-by-element, then the global
    trace DOFs.  assemble_local(ie) must return the (3d+3nfd) square local
    matrix in LocalBlocks order.
    """
    mesh = disc.mesh
    ne = mesh.n_elements
    d = disc.ndof_u
    nfd = disc.ndof_face
    nint = 3 * d
    ntr_loc = 3 * nfd
    n_int_total = ne * nint
    n_total = n_int_total + disc.n_trace_dofs
    A = np.zeros((n_total, n_total))
    for ie in range(ne):
        loc = assemble_local(ie)
        gidx = np.concatenate([
            np.arange(ie * nint, (ie + 1) * nint),
            np.where(disc.trace_dof[ie] >= 0,
                     disc.trace_dof[ie] + n_int_total, -1),
        ])
        keep = gidx >= 0
        A[np.ix_(gidx[keep], gidx[keep])] += loc[np.ix_(keep, keep)]
    return A


def dense_step(disc, spec, tau, dt, state, lag=True):
    """One monolithic implicit step of the ensemble scheme, solved densely.

    With lag=False all deviation terms are dropped (the lag-free
    single-system reference; for J = 1 they vanish anyway).
    Returns the next EnsembleState.
    """
    from ensemble_hdg.local import assemble_local_blocks, local_rhs

    mesh = disc.mesh
    ne = mesh.n_elements
    d = disc.ndof_u
    nfd = disc.ndof_face
    nint = 3 * d
    J = spec.J
    t1 = (state.n + 1) * dt

    cbar = np.stack([disc.sample_scalar(m.c, t1, "elem")
                     for m in spec.members]).mean(0)
    bbar = np.stack([disc.sample_vector(m.beta, t1, "elem")
                     for m in spec.members]).mean(0)
    bbar_f = np.stack([disc.sample_vector_faces(m.beta, t1, "face")
                       for m in spec.members]).mean(0)

    def assemble_local(ie):
        return assemble_local_blocks(disc, ie, cbar[ie], bbar[ie],
                                     bbar_f[ie], tau, dt).full_matrix()

    A = dense_global_matrix(disc, cbar, bbar, bbar_f, tau, dt,
                            assemble_local)
    n_int_total = ne * nint
    n_total = A.shape[0]

    if lag and J > 1:
        c_data = np.stack([disc.sample_scalar(m.c, t1, "data")
                           for m in spec.members])
        b_data = np.stack([disc.sample_vector(m.beta, t1, "data")
                           for m in spec.members])
        bf_data = np.stack([disc.sample_vector_faces(m.beta, t1, "fdata")
                            for m in spec.members])
        c_dev = c_data.mean(0)[None] - c_data
        b_dev = b_data.mean(0)[None] - b_data
        bf_dev = bf_data.mean(0)[None] - bf_data
    else:
        zc = np.zeros((J,) + disc.X_data.shape[:2])
        c_dev = zc
        b_dev = np.zeros(zc.shape + (2,))
        bf_dev = np.zeros((J, ne, 3, len(disc.w_fdata), 2))

    prev = state_samples(disc, state)
    X = disc.X_data
    x, y = X[..., 0].ravel(), X[..., 1].ravel()
    Xf = disc.Xf_fdata
    xf, yf = Xf[..., 0].ravel(), Xf[..., 1].ravel()

    rhs = np.zeros((n_total, J))
    for j, m in enumerate(spec.members):
        f_vals = np.asarray(m.f(x, y, t1), dtype=float).reshape(ne, -1)
        g_vals = np.broadcast_to(
            np.asarray(m.g(xf, yf, t1), dtype=float), xf.shape
        ).reshape(Xf.shape[:3])
        for ie in range(ne):
            loc = local_rhs(
                disc, ie, tau, dt, f_vals[ie], g_vals[ie],
                prev["u"][j, ie], prev["grad_u"][j, ie], prev["q"][j, ie],
                prev["u_face"][j, ie], c_dev[j, ie], b_dev[j, ie],
                bf_dev[j, ie])
            rhs[ie * nint:(ie + 1) * nint, j] += loc[:nint]
            for lf in range(3):
                dof = disc.trace_dof[ie, lf * nfd:(lf + 1) * nfd]
                if dof[0] >= 0:
                    rhs[n_int_total + dof, j] += \
                        loc[nint + lf * nfd:nint + (lf + 1) * nfd]

    sol = np.linalg.solve(A, rhs)
    q = np.empty((J, ne, 2 * d))
    u = np.empty((J, ne, d))
    for ie in range(ne):
        block = sol[ie * nint:(ie + 1) * nint]
        q[:, ie, :] = block[:2 * d].T
        u[:, ie, :] = block[2 * d:].T
    uhat = sol[n_int_total:].T.copy()
    return EnsembleState(state.n + 1, t1, u, q, uhat, disc.k)


def dense_run(disc, spec, tau, dt, steps, state, lag=True):
    for _ in range(steps):
        state = dense_step(disc, spec, tau, dt, state, lag=lag)
    return state
