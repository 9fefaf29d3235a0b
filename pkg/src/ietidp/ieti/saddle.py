"""Saddle-point formulation on the partially continuous space.

Coordinates of the partially continuous space are, per patch, the *free*
active dofs (all except primal vertex dofs and designated edge dofs)
followed by one global coordinate per primal functional. The local map
``T^(k)`` recovers patch coefficients from these coordinates: vertex dofs
take their primal value and each designated dof is fixed by its edge
average.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ..linalg import calibrate_spd_order, scaled
from .local import LocalProblem, patch_map
from .operators import PrimalBasis
from .partition import DofPartition, PrimalConstraints


@dataclass
class SaddleSystem:
    K: scipy.sparse.csr_matrix      # assembled T^T K T
    f: np.ndarray
    B: scipy.sparse.csr_matrix      # jumps in the new coordinates
    G: list                          # per patch: active <- global coordinates
    free: list                       # per patch: active indices of free dofs
    offsets: np.ndarray              # free coordinate offsets, len npatches + 1

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def nfree(self) -> int:
        return int(self.offsets[-1])

    def to_patches(self, x) -> list:
        return [Gk @ x for Gk in self.G]


def _special_dofs(lp: LocalProblem, part: DofPartition):
    """Active indices of vertex dofs and designated dofs with their primal
    global index."""
    lo = part.offsets[lp.k]
    vertex_index = {o.gids[0]: o.index for o in part.primal if o.kind == "vertex"}
    special = {}
    for t in range(lp.ntrace):
        g = int(part.gid[lo + t])
        if g in vertex_index:
            special[int(lp.B[t])] = ("vertex", vertex_index[g], t)
        else:
            e = part.edge_of_gid.get(g)
            if e is not None and part.designated[e] == g:
                special[int(lp.B[t])] = ("designated", e, t)
    return special


def build_saddle_system(locals_: list, part: DofPartition, cons: PrimalConstraints,
                        B_W: scipy.sparse.csr_matrix) -> SaddleSystem:
    frees, specials = [], []
    for lp in locals_:
        sp = _special_dofs(lp, part)
        specials.append(sp)
        frees.append(np.array([a for a in range(lp.nactive) if a not in sp], dtype=int))
    offsets = np.concatenate([[0], np.cumsum([fr.size for fr in frees])]).astype(int)
    nfree = int(offsets[-1])
    n = nfree + part.nprimal
    G, K, f = [], None, np.zeros(n)
    W_to_free = -np.ones(part.nW, dtype=int)
    for lp, fr, sp in zip(locals_, frees, specials):
        col_of = {int(a): offsets[lp.k] + i for i, a in enumerate(fr)}
        rows = list(fr)
        cols = [col_of[int(a)] for a in fr]
        vals = [1.0] * fr.size
        for a, (kind, pi, t) in sp.items():
            pcol = nfree + pi
            if kind == "vertex":
                rows.append(a)
                cols.append(pcol)
                vals.append(1.0)
                continue
            w = cons.weights[lp.k][pi]
            wd = w[t]
            rows.append(a)
            cols.append(pcol)
            vals.append(1.0 / wd)
            for s in np.nonzero(w)[0]:
                if s == t:
                    continue
                b = int(lp.B[s])
                if b in sp:     # vertex dof on the edge
                    c = nfree + sp[b][1]
                else:
                    c = col_of[b]
                rows.append(a)
                cols.append(c)
                vals.append(-w[s] / wd)
        Gk = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(lp.nactive, n))
        G.append(Gk)
        Kk = (Gk.T @ lp.K @ Gk).tocsr()
        K = Kk if K is None else K + Kk
        f += Gk.T @ lp.f
        lo = part.offsets[lp.k]
        for t in range(lp.ntrace):
            c = col_of.get(int(lp.B[t]))
            if c is not None:
                W_to_free[lo + t] = c
    K = scipy.sparse.csr_matrix(0.5 * (K + K.T)) if K is not None else scipy.sparse.csr_matrix((n, n))
    B_W = B_W.tocoo()
    if B_W.nnz and np.any(W_to_free[B_W.col] < 0):
        raise ValueError("jump operator acts on a primal or designated dof")
    B = scipy.sparse.csr_matrix((B_W.data, (B_W.row, W_to_free[B_W.col])), shape=(B_W.shape[0], n))
    return SaddleSystem(K, f, B, G, frees, offsets)


def coarse_embedding(sys: SaddleSystem, locals_: list, part: DofPartition,
                     basis: PrimalBasis) -> scipy.sparse.csr_matrix:
    """Coordinates of the energy-minimizing coarse functions (one column
    per primal functional)."""
    nfree = sys.nfree
    rows, cols, vals = [], [], []
    for lp, fr in zip(locals_, sys.free):
        X = basis.phibar[lp.k][fr]
        gmap = part.primal_map[lp.k]
        r, c = np.nonzero(X)
        rows += list(sys.offsets[lp.k] + r)
        cols += list(gmap[c])
        vals += list(X[r, c])
    rows += list(nfree + np.arange(part.nprimal))
    cols += list(range(part.nprimal))
    vals += [1.0] * part.nprimal
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(sys.n, part.nprimal))


def saddle_preconditioner(sys: SaddleSystem, locals_: list, part: DofPartition,
                          basis: PrimalBasis, cycles: int = 3):
    """Inverse of the block preconditioner for the saddle matrix block:
    exact coarse solve on the energy-minimizing coarse space plus constrained
    regularized multigrid on every patch."""
    Phi = coarse_embedding(sys, locals_, part, basis)
    mg = [lp.reg_mg_operator(cycles) for lp in locals_]
    n = sys.n

    def local(lp, rk):
        phib, C = basis.phibar[lp.k], lp.C_full
        b = np.zeros(lp.nactive)
        b[sys.free[lp.k]] = rk
        b = b - C.T @ (phib.T @ b)
        v = mg[lp.k] @ b
        v = v - phib @ (C @ v)
        return v[sys.free[lp.k]]

    def apply(r):
        r = np.asarray(r, float).ravel()
        out = Phi @ basis.coarse_solve(Phi.T @ r) if part.nprimal else np.zeros(n)
        parts = patch_map(lambda lp: local(lp, r[sys.offsets[lp.k]:sys.offsets[lp.k + 1]]), locals_)
        for lp, v in zip(locals_, parts):
            out[sys.offsets[lp.k]:sys.offsets[lp.k + 1]] += v
        return out

    return scipy.sparse.linalg.LinearOperator((n, n), matvec=apply, dtype=float)


def calibrated_saddle_preconditioner(sys: SaddleSystem, locals_: list, part: DofPartition,
                                     basis: PrimalBasis, cycles: int = 3, margin: float = 0.01,
                                     steps: int = 30, seed: int = 0):
    """Preconditioner inverse scaled so that the preconditioner lies below
    the assembled matrix (required by Bramble-Pasciak CG)."""
    op = saddle_preconditioner(sys, locals_, part, basis, cycles)
    s = calibrate_spd_order(sys.K, op, "below", margin, steps=steps, n=sys.n, seed=seed)
    return scaled(op, s, sys.n), s
