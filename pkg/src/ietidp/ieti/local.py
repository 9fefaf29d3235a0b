"""Patch-local matrices and solver handles.

Everything expensive (factorizations, multigrid hierarchies) is built
lazily, so a variant only pays for the solvers it uses.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ..assembly import assemble_load, assemble_parameter_mass, assemble_stiffness
from ..geometry import SIDES, MultiPatch
from ..linalg import DirectFactor, pcg
from ..multigrid import MgConfig, hierarchy_from_matrix, mg_preconditioner
from .partition import ConstraintError, DofPartition, PatchDofs, PrimalConstraints, dual_embedding

THREADS_ENV = "IETIDP_THREADS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def patch_map(fn, items) -> list:
    """``list(map(fn, items))``, spread over worker threads if configured."""
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as ex:
        return list(ex.map(fn, items))


class LocalProblem:
    """Stiffness, load and constraint data of one patch with solver handles.

    Vectors indexed by the patch's active dofs are called *active*; vectors
    on the interface block are called *trace*.
    """

    def __init__(self, mp: MultiPatch, part: DofPartition, cons: PrimalConstraints, k: int,
                 f, alpha: float = 1e-2):
        self.k = k
        patch = mp.patches[k]
        self.space = patch.space
        self.dirichlet_sides = list(mp.dirichlet_sides(k))
        self.dofs: PatchDofs = part.patches[k]
        act = self.dofs.active
        Kfull = assemble_stiffness(patch.space, patch.geo)
        self.K = Kfull[act][:, act].tocsr()
        self.f = assemble_load(patch.space, patch.geo, f)[act]
        self._Mhat_full = None
        self.alpha = alpha
        I, B = self.dofs.interior, self.dofs.trace
        self.I, self.B = I, B
        self.K_II = self.K[I][:, I].tocsr()
        self.K_IB = self.K[I][:, B].tocsr()
        self.K_BI = self.K_IB.T.tocsr()
        self.K_BB = self.K[B][:, B].tocsr()
        self.C = cons.C[k]
        self.C_full = cons.full(part, k)
        self.E = dual_embedding(part, cons, k)
        self.nprimal = self.C.shape[0]

    @property
    def nactive(self) -> int:
        return self.K.shape[0]

    @property
    def ntrace(self) -> int:
        return self.B.size

    @property
    def floating(self) -> bool:
        return not self.dirichlet_sides

    # -- solver handles -------------------------------------------------

    @cached_property
    def KII_factor(self) -> DirectFactor:
        return DirectFactor(self.K_II)

    @cached_property
    def KII_mg(self):
        return hierarchy_from_matrix(self.K_II, self.space, SIDES)

    @cached_property
    def Mhat(self) -> scipy.sparse.csr_matrix:
        act = self.dofs.active
        return assemble_parameter_mass(self.space)[act][:, act].tocsr()

    @cached_property
    def reg_mg(self):
        """Hierarchy for ``K + alpha * Mhat`` on the active dofs."""
        A = (self.K + self.alpha * self.Mhat).tocsr()
        return hierarchy_from_matrix(A, self.space, self.dirichlet_sides)

    def reg_mg_operator(self, cycles: int = 1):
        return mg_preconditioner(self.reg_mg, MgConfig(cycles=cycles))

    @cached_property
    def kkt(self):
        """Sparse LU of ``[[K, C^T], [C, 0]]`` on the active dofs."""
        A = scipy.sparse.bmat([[self.K, self.C_full.T], [self.C_full, None]], format="csc")
        try:
            lu = scipy.sparse.linalg.splu(A)
        except RuntimeError as exc:
            raise ConstraintError("augmented matrix of patch %d is singular" % self.k) from exc
        return lu

    # -- actions --------------------------------------------------------

    def dirichlet_solve(self, b, mode="direct", tol: float = 1e-10):
        """Solve ``K_II x = b``.

        ``mode`` is ``"direct"``, ``"pcg"`` (MG-preconditioned CG to ``tol``)
        or an int ``c`` (exactly ``c`` V-cycles). Returns ``(x, iterations)``.
        """
        b = np.asarray(b, float)
        if b.size == 0:
            return b.copy(), 0
        if mode == "direct":
            return self.KII_factor.solve(b), 0
        if mode == "pcg":
            x, rep = pcg(self.K_II, b, mg_preconditioner(self.KII_mg, MgConfig()), tol=tol, maxit=500)
            if not rep.converged:
                raise RuntimeError("Dirichlet solve on patch %d did not converge" % self.k)
            return x, rep.iterations
        op = mg_preconditioner(self.KII_mg, MgConfig(cycles=int(mode)))
        return op @ b, 0

    def schur(self, w, mode="direct") -> np.ndarray:
        """``S w = K_BB w - K_BI K_II^{-1} K_IB w``."""
        w = np.asarray(w, float)
        y, _ = self.dirichlet_solve(self.K_IB @ w, mode)
        return self.K_BB @ w - self.K_BI @ y

    def g_local(self, mode="direct", tol: float = 1e-10):
        """``f_B - K_BI K_II^{-1} f_I`` and the inner iteration count."""
        y, its = self.dirichlet_solve(self.f[self.I], mode, tol)
        return self.f[self.B] - self.K_BI @ y, its

    def extend(self, w_trace) -> np.ndarray:
        """Trace vector padded with zeros to the active dofs."""
        out = np.zeros(self.nactive)
        out[self.B] = w_trace
        return out

    def dense_schur(self) -> np.ndarray:
        KII = self.K_II.toarray()
        return self.K_BB.toarray() - self.K_BI.toarray() @ np.linalg.solve(KII, self.K_IB.toarray())


def build_local_problems(mp: MultiPatch, part: DofPartition, cons: PrimalConstraints, f,
                         alpha: float = 1e-2) -> list:
    return patch_map(lambda k: LocalProblem(mp, part, cons, k, f, alpha), range(mp.npatches))
