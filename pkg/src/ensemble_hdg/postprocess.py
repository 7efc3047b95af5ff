"""Element-by-element superconvergent reconstruction of the scalar field.

On each element the degree-(k+1) reconstruction u* matches the weak gradient
of the computed flux, (grad u*, grad z) = -(c q_h, grad z) for all zero-mean
z in P^(k+1), and preserves the element mean of u_h.  The constrained local
problem is solved as a saddle/KKT system with one Lagrange multiplier for
the mean constraint; the KKT matrix depends only on geometry, so its inverse
is precomputed once and reused for every member and time level.

Purely element-local: changing inputs on one element cannot affect any
other element's output.
"""

import numpy as np


class Postprocessor:
    """Batched KKT solver for the mean-constrained gradient recovery."""

    def __init__(self, disc):
        self.disc = disc
        dh = disc.ndof_u_hi
        detJ = disc.geom.det
        # stiffness of the degree-(k+1) basis and its element integrals
        K = np.einsum("e,q,eiqc,ejqc->eij", detJ, disc.w_elem,
                      disc.G_hi_elem, disc.G_hi_elem)
        m = np.einsum("e,q,iq->ei", detJ, disc.w_elem, disc.V_hi_elem)
        kkt = np.zeros((disc.mesh.n_elements, dh + 1, dh + 1))
        kkt[:, :dh, :dh] = K
        kkt[:, :dh, dh] = m
        kkt[:, dh, :dh] = m
        try:
            self.kkt_inv = np.linalg.inv(kkt)
        except np.linalg.LinAlgError:
            ranks = np.linalg.matrix_rank(kkt)
            bad = int(np.argmax(ranks < dh + 1))
            raise RuntimeError(
                f"singular postprocessing system on element {bad} "
                "(degenerate triangle?)") from None
        self._mean_weights = np.einsum("e,q,iq->ei", detJ, disc.w_data,
                                       disc.V_data)

    def apply(self, u_coeffs, q_coeffs, c_vals):
        """Reconstruct u* for all members and elements.

        u_coeffs (J, ne, d) and q_coeffs (J, ne, 2d) are a state's interior
        fields; c_vals (J, ne, nq) samples each member's own inverse
        diffusion at the data-rule points.  Returns (J, ne, d_hi).
        """
        disc = self.disc
        d = disc.ndof_u
        dh = disc.ndof_u_hi
        J, ne = u_coeffs.shape[:2]
        nq = disc.V_data.shape[1]
        wc = disc.w_data * c_vals                       # (J, ne, nq)
        scaled = np.empty((J, ne, nq, 2))
        scaled[..., 0] = wc * (q_coeffs[:, :, :d] @ disc.V_data)
        scaled[..., 1] = wc * (q_coeffs[:, :, d:] @ disc.V_data)
        rhs = np.empty((J, ne, dh + 1))
        # flattened (point, component) layout matches GflatT tables
        rhs[..., :dh] = np.matmul(scaled.reshape(J, ne, 1, 2 * nq),
                                  disc.GflatT_hi_data)[:, :, 0, :]
        rhs[..., :dh] *= -disc.geom.det[None, :, None]
        rhs[..., dh] = np.einsum("jed,ed->je", u_coeffs, self._mean_weights)
        sol = np.matmul(self.kkt_inv, rhs[..., None])[..., 0]
        return sol[..., :dh]


def postprocess_element(disc, ie, q_coeffs, u_coeffs, c_vals):
    """Reference per-element reconstruction (plain dense KKT solve).

    q_coeffs (2d,), u_coeffs (d,) are one element's fields; c_vals (nq,)
    samples the member's inverse diffusion at the element's data points.
    Returns the (d_hi,) coefficients of u*.
    """
    d = disc.ndof_u
    dh = disc.ndof_u_hi
    detJ = disc.geom.det[ie]
    w, wd = disc.w_elem, disc.w_data
    Ghi = disc.G_hi_elem[ie]
    Ghi_d = disc.G_hi_data[ie]

    K = detJ * np.einsum("q,iqc,jqc->ij", w, Ghi, Ghi)
    m = detJ * np.einsum("q,iq->i", w, disc.V_hi_elem)
    kkt = np.zeros((dh + 1, dh + 1))
    kkt[:dh, :dh] = K
    kkt[:dh, dh] = m
    kkt[dh, :dh] = m

    qvals = np.stack([disc.V_data.T @ q_coeffs[:d],
                      disc.V_data.T @ q_coeffs[d:]], axis=-1)
    uvals = disc.V_data.T @ u_coeffs
    rhs = np.empty(dh + 1)
    rhs[:dh] = -detJ * np.einsum("q,q,qc,iqc->i", wd, c_vals, qvals, Ghi_d)
    rhs[dh] = detJ * np.einsum("q,q->", wd, uvals)
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        raise RuntimeError(
            f"singular postprocessing system on element {ie}") from None
    return sol[:dh]
