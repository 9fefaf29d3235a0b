"""Geometric multigrid on dyadic spline hierarchies.

Level 0 is the coarsest level. Coarse operators are Galerkin products
``P^T A P``; smoothing is Gauss-Seidel (forward before, backward after the
coarse correction), which makes the V-cycle a symmetric operator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.linalg import lapack

from .assembly import assemble_parameter_mass, assemble_stiffness
from .linalg import DirectFactor
from .splines import KnotVectorError, TensorSplineSpace, tensor_prolongation


@dataclass(frozen=True)
class MgConfig:
    pre: int = 1
    post: int = 1
    cycles: int = 1
    alpha: float = 0.0

    def __post_init__(self):
        if self.pre + self.post < 1 or self.cycles < 1 or self.alpha < 0:
            raise ValueError("invalid multigrid configuration")


def _band(A, lower: bool) -> np.ndarray:
    coo = A.tocoo()
    off = np.abs(coo.row - coo.col)
    kd = int(off.max()) if coo.nnz else 0
    n = A.shape[0]
    ab = np.zeros((kd + 1, n))
    for k in range(kd + 1):
        if lower:
            ab[k, : n - k] = A.diagonal(-k)
        else:
            ab[kd - k, k:] = A.diagonal(k)
    return ab


class GaussSeidel:
    """Forward/backward Gauss-Seidel sweeps via banded triangular solves."""

    def __init__(self, A):
        A = scipy.sparse.csr_matrix(A)
        if np.any(A.diagonal() == 0.0):
            raise ZeroDivisionError("Gauss-Seidel needs a nonzero diagonal")
        self.A = A
        self._lower = _band(scipy.sparse.tril(A), lower=True)
        self._upper = _band(scipy.sparse.triu(A), lower=False)
        self._L = scipy.sparse.tril(A, -1, format="csr")
        self._U = scipy.sparse.triu(A, 1, format="csr")

    def forward(self, x, b):
        y, info = lapack.dtbtrs(self._lower, b - self._U @ x, uplo="L")
        return y.ravel()

    def backward(self, x, b):
        y, info = lapack.dtbtrs(self._upper, b - self._L @ x, uplo="U")
        return y.ravel()


def gauss_seidel(A, x, b, sweeps: int = 1, order: str = "forward") -> np.ndarray:
    """Apply ``sweeps`` Gauss-Seidel sweeps to ``A x = b`` starting at ``x``."""
    gs = GaussSeidel(A)
    step = gs.forward if order == "forward" else gs.backward
    x = np.array(x, float)
    for _ in range(sweeps):
        x = step(x, np.asarray(b, float))
    return x


@dataclass
class MgHierarchy:
    matrices: list
    prolongations: list
    coarse: DirectFactor
    smoothers: list
    spaces: list = field(default_factory=list, repr=False)
    keep: list = field(default_factory=list, repr=False)

    @property
    def nlevels(self) -> int:
        return len(self.matrices)

    @property
    def size(self) -> int:
        return self.matrices[-1].shape[0]


def _space_hierarchy(space: TensorSplineSpace, levels):
    spaces = [space]
    while levels is None or len(spaces) < levels:
        try:
            coarse = spaces[0].coarsen()
        except KnotVectorError:
            if levels is None:
                break
            raise ValueError("space does not admit %d dyadic levels" % levels)
        spaces.insert(0, coarse)
        if levels is None and max(kv.numspans for kv in coarse.kvs) == 1:
            break
    return spaces


def _kept(space: TensorSplineSpace, sides) -> np.ndarray:
    if not sides:
        return np.arange(space.size)
    drop = np.concatenate([space.side_dofs(s) for s in sides])
    return np.setdiff1d(np.arange(space.size), drop)


def hierarchy_from_matrix(A, space: TensorSplineSpace, eliminated_sides=(), levels=None) -> MgHierarchy:
    """Galerkin hierarchy for the fine matrix ``A`` posed on ``space`` with
    the dofs of ``eliminated_sides`` removed (``A`` is given in reduced form).

    With ``levels=None`` the deepest hierarchy with a nonempty coarsest level
    is used.
    """
    spaces = _space_hierarchy(space, levels)
    keeps = [_kept(s, eliminated_sides) for s in spaces]
    if levels is None:
        while len(spaces) > 1 and keeps[0].size == 0:
            spaces.pop(0)
            keeps.pop(0)
    if keeps[0].size == 0:
        raise ValueError("coarsest level has no dofs; hierarchy too shallow")
    A = scipy.sparse.csr_matrix(A)
    if A.shape[0] != keeps[-1].size:
        raise ValueError("fine matrix does not match the reduced fine space")
    mats = [A]
    prols = []
    for l in range(len(spaces) - 1, 0, -1):
        P = tensor_prolongation(spaces[l - 1], spaces[l])
        P = P[keeps[l]][:, keeps[l - 1]].tocsr()
        P.eliminate_zeros()
        Ac = (P.T @ mats[0] @ P).tocsr()
        Ac = 0.5 * (Ac + Ac.T)
        mats.insert(0, Ac.tocsr())
        prols.insert(0, P)
    coarse = DirectFactor(mats[0])
    smoothers = [None] + [GaussSeidel(M) for M in mats[1:]]
    return MgHierarchy(mats, prols, coarse, smoothers, spaces, keeps)


def build_hierarchy(fine_space: TensorSplineSpace, geo, dirichlet_sides=(), alpha: float = 0.0,
                    levels=None) -> MgHierarchy:
    """Assemble ``K (+ alpha * Mhat)`` on the fine space with the Dirichlet
    sides removed and coarsen it by Galerkin products."""
    K = assemble_stiffness(fine_space, geo)
    if alpha > 0:
        K = K + alpha * assemble_parameter_mass(fine_space)
    keep = _kept(fine_space, dirichlet_sides)
    K = scipy.sparse.csr_matrix(K)[keep][:, keep]
    return hierarchy_from_matrix(K, fine_space, dirichlet_sides, levels)


def _vcycle(h: MgHierarchy, level: int, b, cfg: MgConfig):
    if level == 0:
        return h.coarse.solve(b)
    A = h.matrices[level]
    gs = h.smoothers[level]
    x = np.zeros_like(b)
    for _ in range(cfg.pre):
        x = gs.forward(x, b)
    P = h.prolongations[level - 1]
    x = x + P @ _vcycle(h, level - 1, P.T @ (b - A @ x), cfg)
    for _ in range(cfg.post):
        x = gs.backward(x, b)
    return x


def v_cycle(h: MgHierarchy, cfg: MgConfig, b) -> np.ndarray:
    """One V-cycle for ``A_fine x = b`` from a zero initial guess."""
    return _vcycle(h, h.nlevels - 1, np.asarray(b, float), cfg)


def mg_preconditioner(h: MgHierarchy, cfg: MgConfig) -> scipy.sparse.linalg.LinearOperator:
    """``cfg.cycles`` stationary V-cycle iterations from zero as a linear
    (symmetric positive definite) operator approximating ``A_fine^{-1}``."""
    A = h.matrices[-1]

    def apply(b):
        b = np.asarray(b, float).ravel()
        x = v_cycle(h, cfg, b)
        for _ in range(cfg.cycles - 1):
            x = x + v_cycle(h, cfg, b - A @ x)
        return x

    n = h.size
    return scipy.sparse.linalg.LinearOperator((n, n), matvec=apply, dtype=float)
