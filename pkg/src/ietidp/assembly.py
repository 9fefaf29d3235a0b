"""Patchwise Galerkin assembly of stiffness, parameter mass and load."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .splines import KnotVector, TensorSplineSpace, eval_basis_batch


class AssemblyError(RuntimeError):
    pass


def _quadrature_1d(kv: KnotVector, nq: int, nderiv: int = 1):
    """Gauss points per nonempty span with basis tables.

    Returns ``(x, w, first, table)`` with shapes ``(S, nq)``, ``(S, nq)``,
    ``(S,)`` and ``(S, nq, nderiv+1, p+1)``.
    """
    gx, gw = np.polynomial.legendre.leggauss(nq)
    mesh = kv.mesh
    a, b = mesh[:-1, None], mesh[1:, None]
    x = 0.5 * (a + b) + 0.5 * (b - a) * gx
    w = 0.5 * (b - a) * gw
    first, table = eval_basis_batch(kv, x.ravel(), nderiv)
    S = mesh.size - 1
    first = first.reshape(S, nq)[:, 0]
    return x, w, first, table.reshape(S, nq, nderiv + 1, kv.p + 1)


def _element_data(space: TensorSplineSpace, geo, nq=None):
    kv0, kv1 = space.kvs
    n0 = nq or kv0.p + 1
    n1 = nq or kv1.p + 1
    x0, w0, f0, t0 = _quadrature_1d(kv0, n0)
    x1, w1, f1, t1 = _quadrature_1d(kv1, n1)
    # point grid indexed (e1, q1, e0, q0)
    XI = np.broadcast_to(x0[None, None, :, :], x1.shape + x0.shape)
    ETA = np.broadcast_to(x1[:, :, None, None], x1.shape + x0.shape)
    J = geo.jacobian(XI, ETA)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0.0):
        raise AssemblyError("non-positive Jacobian determinant at a quadrature point")
    W = w1[:, :, None, None] * w0[None, None, :, :]
    return (x0, w0, f0, t0), (x1, w1, f1, t1), XI, ETA, J, det, W


def _local_to_global(space, f0, f1):
    p0, p1 = space.degree
    M0 = space.dims[0]
    i0 = f0[:, None] + np.arange(p0 + 1)       # (S0, a0)
    i1 = f1[:, None] + np.arange(p1 + 1)       # (S1, a1)
    # (S1, S0, a1, a0) flat indices
    return i0[None, :, None, :] + M0 * i1[:, None, :, None]


def _scatter(space, dofs, local) -> scipy.sparse.csr_matrix:
    S1, S0, a1, a0 = dofs.shape
    d = dofs.reshape(S1, S0, a1 * a0)
    rows = np.broadcast_to(d[:, :, :, None], d.shape + (a1 * a0,))
    cols = np.broadcast_to(d[:, :, None, :], d.shape + (a1 * a0,))
    n = space.size
    A = scipy.sparse.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    return A.tocsr()


def assemble_stiffness(space: TensorSplineSpace, geo) -> scipy.sparse.csr_matrix:
    """Stiffness matrix of ``int grad u . grad v`` over the mapped patch,
    using ``p+1`` Gauss points per direction and span."""
    q0, q1, _, _, J, det, W = _element_data(space, geo)
    _, _, f0, t0 = q0
    _, _, f1, t1 = q1
    # reference gradients of the local tensor functions
    # shapes: t0 (S0, n0, 2, a0), t1 (S1, n1, 2, a1)
    d_xi = np.einsum("spa,tqb->tqspba", t0[:, :, 1, :], t1[:, :, 0, :])
    d_eta = np.einsum("spa,tqb->tqspba", t0[:, :, 0, :], t1[:, :, 1, :])
    Jinv = np.linalg.inv(J)                         # (S1, n1, S0, n0, 2, 2)
    # physical gradient = J^{-T} ref gradient
    gx = Jinv[..., 0, 0, None, None] * d_xi + Jinv[..., 1, 0, None, None] * d_eta
    gy = Jinv[..., 0, 1, None, None] * d_xi + Jinv[..., 1, 1, None, None] * d_eta
    wd = (W * det)[..., None, None]
    local = (np.einsum("tqspba,tqspcd->tsbacd", gx * wd, gx)
             + np.einsum("tqspba,tqspcd->tsbacd", gy * wd, gy))
    S1, S0, a1, a0 = local.shape[:4]
    local = local.reshape(S1, S0, a1 * a0, a1 * a0)
    return _scatter(space, _local_to_global(space, f0, f1), local)


def mass_1d(kv: KnotVector) -> scipy.sparse.csr_matrix:
    """Univariate B-spline mass matrix on [0, 1]."""
    _, w, first, table = _quadrature_1d(kv, kv.p + 1, 0)
    vals = table[:, :, 0, :]                         # (S, q, a)
    local = np.einsum("sq,sqa,sqb->sab", w, vals, vals)
    idx = first[:, None] + np.arange(kv.p + 1)
    rows = np.broadcast_to(idx[:, :, None], local.shape)
    cols = np.broadcast_to(idx[:, None, :], local.shape)
    n = kv.numdofs
    return scipy.sparse.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def assemble_parameter_mass(space: TensorSplineSpace) -> scipy.sparse.csr_matrix:
    """Mass matrix on the parameter domain, assembled as a Kronecker product."""
    M0 = mass_1d(space.kvs[0])
    M1 = mass_1d(space.kvs[1])
    return scipy.sparse.kron(M1, M0, format="csr")


def assemble_load(space: TensorSplineSpace, geo, f, nq=None) -> np.ndarray:
    """Load vector ``int f(G(xi)) N_a |det J| dxi``.

    ``f`` is called with physical coordinates ``(x, y)`` (arrays) and may
    also be a constant.
    """
    q0, q1, XI, ETA, J, det, W = _element_data(space, geo, nq)
    _, _, f0, t0 = q0
    _, _, f1, t1 = q1
    if callable(f):
        X = geo(XI, ETA)
        fv = np.asarray(f(X[..., 0], X[..., 1]), float) * np.ones(det.shape)
    else:
        fv = np.full(det.shape, float(f))
    wf = W * det * fv                                # (S1, n1, S0, n0)
    local = np.einsum("tqsp,spa,tqb->tsba", wf, t0[:, :, 0, :], t1[:, :, 0, :])
    dofs = _local_to_global(space, f0, f1)
    out = np.zeros(space.size)
    np.add.at(out, dofs.ravel(), local.ravel())
    return out


def l2_error_sq(space: TensorSplineSpace, geo, coeffs, exact, nq=None) -> float:
    """Squared L2 error of a patch spline against ``exact(x, y)``."""
    nq = nq or max(space.degree) + 3
    q0, q1, XI, ETA, J, det, W = _element_data(space, geo, nq)
    _, _, f0, t0 = q0
    _, _, f1, t1 = q1
    dofs = _local_to_global(space, f0, f1)           # (S1, S0, a1, a0)
    c = np.asarray(coeffs)[dofs]
    uh = np.einsum("tsba,spa,tqb->tqsp", c, t0[:, :, 0, :], t1[:, :, 0, :])
    X = geo(XI, ETA)
    ue = exact(X[..., 0], X[..., 1])
    return float(np.sum(W * det * (uh - ue) ** 2))


@dataclass
class PatchSystem:
    """Patch matrices after removal of the Dirichlet dofs.

    ``active[i]`` is the full-space flat index of reduced dof ``i``.
    """

    K: scipy.sparse.csr_matrix
    f: np.ndarray
    active: np.ndarray
    nfull: int
    M: scipy.sparse.csr_matrix | None = None

    def scatter(self, u_reduced) -> np.ndarray:
        out = np.zeros(self.nfull)
        out[self.active] = u_reduced
        return out


def eliminate_dirichlet(K, f, dofs, M=None) -> PatchSystem:
    """Remove the rows/columns listed in ``dofs`` (homogeneous Dirichlet)."""
    n = K.shape[0]
    keep = np.setdiff1d(np.arange(n), np.asarray(dofs, dtype=int))
    K = scipy.sparse.csr_matrix(K)
    Kr = K[keep][:, keep].tocsr()
    Mr = None if M is None else scipy.sparse.csr_matrix(M)[keep][:, keep].tocsr()
    return PatchSystem(Kr, np.asarray(f, float)[keep], keep, n, Mr)
