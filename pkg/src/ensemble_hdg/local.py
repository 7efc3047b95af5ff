"""Element-local blocks of the ensemble HDG bilinear form and condensation.

Local unknown ordering per element: interior DOFs [qx | qy | u] (each a
degree-k block) followed by the three face-trace blocks [f0 | f1 | f2].
The interior saddle system is eliminated per element (static condensation)
leaving a dense Schur complement on the trace DOFs; boundary faces carry no
unknowns and their rows/columns are dropped at scatter time (their trace
values are identically zero, Dirichlet data enters only through the RHS).

Two code paths cover the same contracts: per-element functions written as
plain quadrature sums (the readable reference) and `*_all` batched versions
used by the time stepper.  Tests pin them against each other and against an
independent monomial-basis oracle.
"""

import numpy as np


class CoefficientError(ValueError):
    """A sampled coefficient violates a positivity requirement."""


class LocalBlocks:
    """Dense blocks of one element's contribution to the scheme.

    Blocks are named by (test row, trial column): q/u are interior,
    'hat' is the face-trace space stacked over the element's three faces.
    """

    def __init__(self, ie, a_qq, b_qu, c_qhat, d_uq, conv_uu, time_uu,
                 stab_uu, stab_uhat, flux_hatq, conv_hatu, stab_hatu,
                 stab_hathat):
        self.ie = ie
        self.a_qq = a_qq
        self.b_qu = b_qu
        self.c_qhat = c_qhat
        self.d_uq = d_uq
        self.conv_uu = conv_uu
        self.time_uu = time_uu
        self.stab_uu = stab_uu
        self.stab_uhat = stab_uhat
        self.flux_hatq = flux_hatq
        self.conv_hatu = conv_hatu
        self.stab_hatu = stab_hatu
        self.stab_hathat = stab_hathat

    @property
    def interior_matrix(self):
        """The (q, u) x (q, u) sub-matrix including the 1/dt mass term."""
        top = np.hstack([self.a_qq, self.b_qu])
        bot = np.hstack([self.d_uq, self.time_uu + self.conv_uu + self.stab_uu])
        return np.vstack([top, bot])

    @property
    def coupling(self):
        """Interior-row, trace-column block."""
        return np.vstack([self.c_qhat, self.stab_uhat])

    @property
    def trace_rows(self):
        """Trace-row, interior-column block."""
        return np.hstack([self.flux_hatq, self.conv_hatu + self.stab_hatu])

    @property
    def trace_block(self):
        return self.stab_hathat

    def full_matrix(self):
        return np.block([[self.interior_matrix, self.coupling],
                         [self.trace_rows, self.trace_block]])


def assemble_local_blocks(disc, ie, cbar, bbar, bbar_face, tau, dt):
    """Assemble one element's blocks from sampled mean coefficients.

    Parameters
    ----------
    disc : Discretization
    ie : int
        Element index.
    cbar : (nq,) array
        Ensemble-mean inverse diffusion at the element-rule points.
    bbar : (nq, 2) array
        Ensemble-mean velocity at the element-rule points.
    bbar_face : (3, nqf, 2) array
        Mean velocity at the face-rule points of the three faces.
    tau : float
        Positive stabilization constant on this element.
    dt : float
        Positive time step.
    """
    if tau <= 0:
        raise ValueError(f"element {ie}: tau must be positive, got {tau}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    cbar = np.asarray(cbar, dtype=float)
    if np.any(cbar <= 0):
        raise CoefficientError(
            f"element {ie}: mean inverse-diffusion sample <= 0 "
            f"(min {cbar.min():.3e})")

    d = disc.ndof_u
    nfd = disc.ndof_face
    w = disc.w_elem
    V = disc.V_elem                     # (d, nq)
    G = disc.G_elem[ie]                 # (d, nq, 2) physical gradients
    detJ = disc.geom.det[ie]
    lens = disc.geom.edge_lengths[ie]
    nrm = disc.geom.normals[ie]
    Vf = disc.Vf_face[ie]               # (3, d, nqf)
    Psi = disc.Psi_face                 # (nfd, nqf)
    wf = disc.w_face

    mass_c = detJ * np.einsum("q,q,iq,jq->ij", w, cbar, V, V)
    a_qq = np.zeros((2 * d, 2 * d))
    a_qq[:d, :d] = mass_c
    a_qq[d:, d:] = mass_c

    b_qu = np.zeros((2 * d, d))
    d_uq = np.zeros((d, 2 * d))
    for comp in range(2):
        div = detJ * np.einsum("q,iq,jq->ij", w, G[..., comp], V)
        b_qu[comp * d:(comp + 1) * d, :] = -div
        d_uq[:, comp * d:(comp + 1) * d] = div.T

    conv_uu = detJ * np.einsum("q,qc,jqc,iq->ij", w, bbar, G, V)
    time_uu = (detJ / dt) * np.einsum("q,iq,jq->ij", w, V, V)

    c_qhat = np.zeros((2 * d, 3 * nfd))
    stab_uu = np.zeros((d, d))
    stab_uhat = np.zeros((d, 3 * nfd))
    flux_hatq = np.zeros((3 * nfd, 2 * d))
    conv_hatu = np.zeros((3 * nfd, d))
    stab_hatu = np.zeros((3 * nfd, d))
    stab_hathat = np.zeros((3 * nfd, 3 * nfd))
    for lf in range(3):
        cols = slice(lf * nfd, (lf + 1) * nfd)
        ln = lens[lf]
        phiphi = ln * np.einsum("q,iq,jq->ij", wf, Vf[lf], Vf[lf])
        psiphi = ln * np.einsum("q,mq,jq->mj", wf, Psi, Vf[lf])
        psipsi = ln * np.einsum("q,mq,lq->ml", wf, Psi, Psi)
        stab_uu += tau * phiphi
        stab_uhat[:, cols] = -tau * psiphi.T
        stab_hatu[cols, :] = -tau * psiphi
        stab_hathat[cols, cols] = tau * psipsi
        bn = bbar_face[lf] @ nrm[lf]
        conv_hatu[cols, :] = -ln * np.einsum("q,q,mq,jq->mj", wf, bn, Psi, Vf[lf])
        for comp in range(2):
            c_qhat[comp * d:(comp + 1) * d, cols] = nrm[lf, comp] * psiphi.T
            flux_hatq[cols, comp * d:(comp + 1) * d] = \
                -nrm[lf, comp] * psiphi

    return LocalBlocks(ie, a_qq, b_qu, c_qhat, d_uq, conv_uu, time_uu,
                       stab_uu, stab_uhat, flux_hatq, conv_hatu, stab_hatu,
                       stab_hathat)


class CondensedElement:
    """Schur complement and lifting maps of one condensed element.

    schur       : trace x trace block  A_TT - A_TI A_II^-1 A_IT
    solve_int   : A_II^-1
    lift        : A_II^-1 A_IT  (trace -> interior)
    reduce_rhs  : A_TI A_II^-1  (interior RHS -> trace RHS correction)
    """

    def __init__(self, ie, schur, solve_int, lift, reduce_rhs):
        self.ie = ie
        self.schur = schur
        self.solve_int = solve_int
        self.lift = lift
        self.reduce_rhs = reduce_rhs


def condense(blocks):
    """Eliminate an element's interior unknowns onto its face traces."""
    A_II = blocks.interior_matrix
    A_IT = blocks.coupling
    A_TI = blocks.trace_rows
    A_TT = blocks.trace_block
    try:
        W = np.linalg.inv(A_II)
    except np.linalg.LinAlgError:
        raise RuntimeError(
            f"singular interior block on element {blocks.ie}") from None
    G = A_TI @ W
    return CondensedElement(blocks.ie, A_TT - G @ A_IT, W, W @ A_IT, G)


def local_rhs(disc, ie, tau, dt, f_vals, g_vals, u_prev, gu_prev, q_prev,
              u_prev_face, c_dev, b_dev, b_dev_face):
    """One element's RHS vector (q-rows, u-rows, uhat-rows) for one member.

    All field inputs are sample arrays at this element's data-rule points:
    f_vals (nq,), u_prev (nq,), gu_prev (nq, 2), q_prev (nq, 2), c_dev (nq,)
    the mean-minus-member deviation of the inverse diffusion, b_dev (nq, 2)
    the velocity deviation; face samples u_prev_face (3, nqf),
    b_dev_face (3, nqf, 2); g_vals (3, nqf) is the Dirichlet datum on the
    element's boundary faces (rows of interior faces are ignored).
    """
    d = disc.ndof_u
    nfd = disc.ndof_face
    w = disc.w_data
    V = disc.V_data
    detJ = disc.geom.det[ie]
    lens = disc.geom.edge_lengths[ie]
    nrm = disc.geom.normals[ie]
    Vf = disc.Vf_fdata[ie]
    Psi = disc.Psi_fdata
    wf = disc.w_fdata
    on_boundary = disc.mesh.boundary[disc.mesh.elem_faces[ie]]

    rhs = np.zeros(3 * d + 3 * nfd)
    # q-rows: ((cbar - c_j) q_prev, r) - <g, r.n> on boundary faces
    for comp in range(2):
        rows = slice(comp * d, (comp + 1) * d)
        rhs[rows] = detJ * np.einsum(
            "q,q,q,iq->i", w, c_dev, q_prev[:, comp], V)
    # u-rows: (f, v) + (1/dt)(u_prev, v) + ((bdev) . grad u_prev, v)
    lag_conv = np.einsum("qc,qc->q", b_dev, gu_prev)
    rhs[2 * d:3 * d] = detJ * np.einsum(
        "q,q,iq->i", w, f_vals + u_prev / dt + lag_conv, V)
    for lf in range(3):
        ln = lens[lf]
        if on_boundary[lf]:
            # boundary data: -<g, r.n> and <tau g, v>
            gmom = ln * np.einsum("q,q,iq->i", wf, g_vals[lf], Vf[lf])
            for comp in range(2):
                rows = slice(comp * d, (comp + 1) * d)
                rhs[rows] -= nrm[lf, comp] * gmom
            rhs[2 * d:3 * d] += tau * gmom
        else:
            # uhat-rows: -<(bdev . n) u_prev, vhat>
            rows = slice(3 * d + lf * nfd, 3 * d + (lf + 1) * nfd)
            bn = b_dev_face[lf] @ nrm[lf]
            rhs[rows] = -ln * np.einsum(
                "q,q,q,mq->m", wf, bn, u_prev_face[lf], Psi)
    return rhs


def recover_interior(cond, trace_values, rhs_interior):
    """Back-substitute face traces into one element's (q, u) coefficients.

    trace_values holds the element's three face-trace blocks with zeros on
    boundary faces; returns (q_coeffs (2d,), u_coeffs (d,)).
    """
    x = cond.solve_int @ rhs_interior - cond.lift @ trace_values
    nint = len(x)
    d = nint // 3
    return x[:2 * d], x[2 * d:]


# --------------------------------------------------------------------------
# batched versions over all elements (the solver's hot path)
# --------------------------------------------------------------------------

def assemble_all_blocks(disc, cbar, bbar, bbar_face, tau, dt):
    """Batched local matrices: (A_II, A_IT, A_TI, A_TT) over all elements.

    cbar (ne, nq), bbar (ne, nq, 2) at the element rule; bbar_face
    (ne, 3, nqf, 2) at the face rule; tau (ne,) positive per element.
    """
    if np.any(np.asarray(tau) <= 0):
        raise ValueError("tau must be positive on every element")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if np.any(cbar <= 0):
        bad = int(np.argmax((cbar <= 0).any(axis=1)))
        raise CoefficientError(
            f"element {bad}: mean inverse-diffusion sample <= 0")
    mesh = disc.mesh
    ne = mesh.n_elements
    d = disc.ndof_u
    nfd = disc.ndof_face
    nint, ntr = 3 * d, 3 * nfd
    w, V, G = disc.w_elem, disc.V_elem, disc.G_elem
    detJ = disc.geom.det
    lens = disc.geom.edge_lengths
    nrm = disc.geom.normals
    Vf, Psi, wf = disc.Vf_face, disc.Psi_face, disc.w_face
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (ne,))

    A_II = np.zeros((ne, nint, nint))
    A_IT = np.zeros((ne, nint, ntr))
    A_TI = np.zeros((ne, ntr, nint))
    A_TT = np.zeros((ne, ntr, ntr))

    mass_c = np.einsum("e,q,eq,iq,jq->eij", detJ, w, cbar, V, V)
    A_II[:, :d, :d] = mass_c
    A_II[:, d:2 * d, d:2 * d] = mass_c
    for comp in range(2):
        div = np.einsum("e,q,eiqc,jq->eij", detJ, w, G[:, :, :, comp:comp + 1],
                        V)
        A_II[:, comp * d:(comp + 1) * d, 2 * d:] = -div
        A_II[:, 2 * d:, comp * d:(comp + 1) * d] = np.swapaxes(div, 1, 2)
    A_II[:, 2 * d:, 2 * d:] = np.einsum(
        "e,q,eqc,ejqc,iq->eij", detJ, w, bbar, G, V)
    A_II[:, 2 * d:, 2 * d:] += np.einsum(
        "e,q,iq,jq->eij", detJ / dt, w, V, V)

    for lf in range(3):
        cols = slice(lf * nfd, (lf + 1) * nfd)
        ln = lens[:, lf]
        phiphi = np.einsum("e,q,eiq,ejq->eij", ln, wf, Vf[:, lf], Vf[:, lf])
        psiphi = np.einsum("e,q,mq,ejq->emj", ln, wf, Psi, Vf[:, lf])
        psipsi = np.einsum("e,q,mq,lq->eml", ln, wf, Psi, Psi)
        A_II[:, 2 * d:, 2 * d:] += tau[:, None, None] * phiphi
        A_IT[:, 2 * d:, cols] = -tau[:, None, None] * \
            np.swapaxes(psiphi, 1, 2)
        A_TI[:, cols, 2 * d:] = -tau[:, None, None] * psiphi
        A_TT[:, cols, cols] = tau[:, None, None] * psipsi
        bn = np.einsum("eqc,ec->eq", bbar_face[:, lf], nrm[:, lf])
        A_TI[:, cols, 2 * d:] += -np.einsum(
            "e,q,eq,mq,ejq->emj", ln, wf, bn, Psi, Vf[:, lf])
        for comp in range(2):
            ccols = slice(comp * d, (comp + 1) * d)
            scaled = ln * nrm[:, lf, comp]
            A_IT[:, ccols, cols] = np.swapaxes(np.einsum(
                "e,q,mq,ejq->emj", scaled, wf, Psi, Vf[:, lf]), 1, 2)
            A_TI[:, cols, ccols] = -np.einsum(
                "e,q,mq,ejq->emj", scaled, wf, Psi, Vf[:, lf])
    return A_II, A_IT, A_TI, A_TT


class BatchedCondensed:
    """Condensation arrays for all elements: see CondensedElement."""

    def __init__(self, schur, solve_int, lift, reduce_rhs):
        self.schur = schur
        self.solve_int = solve_int
        self.lift = lift
        self.reduce_rhs = reduce_rhs


def condense_all(A_II, A_IT, A_TI, A_TT):
    try:
        W = np.linalg.inv(A_II)
    except np.linalg.LinAlgError:
        ranks = np.linalg.matrix_rank(A_II)
        bad = int(np.argmax(ranks < A_II.shape[1]))
        raise RuntimeError(f"singular interior block on element {bad}") \
            from None
    G = A_TI @ W
    return BatchedCondensed(A_TT - G @ A_IT, W, W @ A_IT, G)


def _boundary_data_operator(disc, tau):
    """Linear map from boundary samples g (J, nbf, nqf) to b_int updates.

    Returns (op (nbf, 3d, nqf), scatter (ne, nbf) sparse); cached on the
    discretization per tau array.
    """
    import scipy.sparse as sp

    tau = np.broadcast_to(np.asarray(tau, dtype=float),
                          (disc.mesh.n_elements,))
    cache = disc.__dict__.setdefault("_bnd_op_cache", {})
    key = tau.tobytes()
    hit = cache.get(key)
    if hit is not None:
        return hit
    be, bl = disc.boundary_face_sides()
    d = disc.ndof_u
    ln = disc.geom.edge_lengths[be, bl]
    nb = disc.geom.normals[be, bl]
    # moment operator: g samples -> <g, phi_i> per boundary face
    mom = ln[:, None, None] * disc.Vf_fdata[be, bl] * \
        disc.w_fdata[None, None, :]
    op = np.empty((len(be), 3 * d, mom.shape[2]))
    op[:, :d] = -nb[:, 0, None, None] * mom      # -<g, r.n> x-rows
    op[:, d:2 * d] = -nb[:, 1, None, None] * mom
    op[:, 2 * d:] = tau[be, None, None] * mom    # <tau g, v>
    scatter = sp.csr_matrix(
        (np.ones(len(be)), (be, np.arange(len(be)))),
        shape=(disc.mesh.n_elements, len(be)))
    if len(cache) > 4:
        cache.clear()
    cache[key] = (op, scatter)
    return op, scatter


def assemble_all_rhs(disc, tau, dt, f_vals, g_face_vals, u_prev, gu_prev,
                     q_prev, u_prev_face, c_dev, b_dev, b_dev_face,
                     b_dev_face_normal=None):
    """Batched member RHS: returns (b_int (J,ne,3d), b_tr (J,ne,3nfd)).

    Sample shapes (J members leading): f_vals (J,ne,nq); u_prev (J,ne,nq);
    gu_prev (J,ne,nq,2); q_prev (J,ne,nq,2); u_prev_face (J,ne,3,nqf).
    Deviations c_dev (J,ne,nq) and b_dev (J,ne,nq,2), b_dev_face
    (J,ne,3,nqf,2) may be None when all lag terms vanish (J = 1).
    g_face_vals (J,nbf,nqf) holds Dirichlet data on boundary faces.
    b_dev_face_normal (J,ne,3,nqf) may carry the precomputed deviation
    normal components (autonomous coefficients reuse them every step).
    """
    mesh = disc.mesh
    J, ne = f_vals.shape[:2]
    d, nfd = disc.ndof_u, disc.ndof_face
    VwT = disc.VwT_data                  # (nq, d), weights folded in
    PsiwT = disc.PsiwT_fdata             # (nqf, nfd)
    detJ = disc.geom.det[None, :, None]

    b_int = np.empty((J, ne, 3 * d))
    b_tr = np.zeros((J, ne, 3 * nfd))

    u_part = u_prev / dt
    u_part += f_vals
    if b_dev is not None:
        u_part += np.einsum("jeqc,jeqc->jeq", b_dev, gu_prev)
    b_int[:, :, 2 * d:] = (u_part @ VwT) * detJ
    if c_dev is not None:
        b_int[:, :, :d] = ((c_dev * q_prev[..., 0]) @ VwT) * detJ
        b_int[:, :, d:2 * d] = ((c_dev * q_prev[..., 1]) @ VwT) * detJ
        # uhat-rows: -<(bdev.n) u_prev, vhat> from each element side
        bn_dev = b_dev_face_normal
        if bn_dev is None:
            bn_dev = (b_dev_face *
                      disc.geom.normals[None, :, :, None, :]).sum(-1)
        lag = (bn_dev * u_prev_face) @ PsiwT
        interior = getattr(disc, "_interior_side_scale", None)
        if interior is None:
            interior = np.where(mesh.boundary[mesh.elem_faces], 0.0,
                                -disc.geom.edge_lengths)
            disc._interior_side_scale = interior
        lag *= interior[None, :, :, None]
        b_tr[:] = lag.reshape(J, ne, 3 * nfd)
    else:
        b_int[:, :, :2 * d] = 0.0

    # Dirichlet terms on boundary faces: -<g, r.n> and <tau g, v>
    if g_face_vals is not None and g_face_vals.size:
        op, scatter = _boundary_data_operator(disc, tau)
        contrib = np.einsum("bif,jbf->bji", op, g_face_vals)
        upd = scatter @ contrib.reshape(len(contrib), -1)
        b_int += np.moveaxis(upd.reshape(ne, J, 3 * d), 1, 0)
    return b_int, b_tr


def recover_all(cond, trace_values, b_int):
    """Batched back-substitution: (J,ne,3nfd) traces -> (J,ne,3d) interior."""
    out = np.matmul(cond.solve_int, b_int[..., None])
    out -= np.matmul(cond.lift, trace_values[..., None])
    return out[..., 0]
