"""Energy-minimizing primal basis and the interface operators ``F``, ``d``
and the scaled Dirichlet preconditioner.

Vectors on the torn interface space ``W`` are stored as one concatenated
array (patch traces in patch order). A functional ``r`` on ``W`` is
represented the same way; its primal part is ``sum_k R_k^T Phi_k^T r_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from ..linalg import NotSPDError, SZSolver, calibrate_spd_order, scaled, semidefinite_pcg
from .local import LocalProblem, patch_map
from .partition import DofPartition, JumpOperator, PrimalConstraints


@dataclass
class PrimalBasis:
    phibar: list            # per patch (nactive, nprimal_local)
    phi: list               # per patch (ntrace, nprimal_local)
    mu: list                # per patch (nprimal_local, nprimal_local), column j = mu_j
    S_local: list           # per patch symmetrized -mu
    S_PP: np.ndarray        # global coarse matrix
    factor: tuple = field(repr=False)
    iterations: list = field(default_factory=list)   # SZ iterations per basis function

    def coarse_solve(self, b) -> np.ndarray:
        return scipy.linalg.cho_solve(self.factor, b)


def _basis_direct(lp: LocalProblem):
    m = lp.nprimal
    rhs = np.zeros((lp.nactive + m, m))
    rhs[lp.nactive:, :] = np.eye(m)
    sol = lp.kkt.solve(rhs)
    return sol[:lp.nactive], sol[lp.nactive:], []


def sz_khat_inverse(lp: LocalProblem, cycles: int = 1, margin: float = 0.01, seed: int = 0):
    """Regularized multigrid action scaled so that its inverse lies above
    ``K`` (required by the SZ preconditioner)."""
    B = lp.reg_mg_operator(cycles)
    s = calibrate_spd_order(lp.K, B, "above", margin, n=lp.nactive, seed=seed)
    return scaled(B, s, lp.nactive)


def _basis_sz(lp: LocalProblem, tol: float, cycles: int, seed: int):
    m = lp.nprimal
    solver = SZSolver(lp.K, lp.C_full, sz_khat_inverse(lp, cycles, seed=seed))
    X = np.zeros((lp.nactive, m))
    MU = np.zeros((m, m))
    its = []
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        (x, mu), rep = solver.solve(None, e, tol=tol, maxit=500)
        if not rep.converged:
            raise RuntimeError("SZ-PCG for basis function %d on patch %d: %s" % (j, lp.k, rep.flag))
        X[:, j], MU[:, j] = x, mu
        its.append(rep.iterations)
    return X, MU, its


def compute_primal_basis(locals_: list, part: DofPartition, mode: str = "direct",
                         tol: float = 1e-12, cycles: int = 1, seed: int = 0) -> PrimalBasis:
    """Solve ``[[K, C^T], [C, 0]] [phibar_j; mu_j] = [0; e_j]`` on every patch
    and assemble the coarse matrix ``S_PP`` from ``-mu``."""
    if mode == "direct":
        res = patch_map(_basis_direct, locals_)
    elif mode == "sz_pcg":
        res = patch_map(lambda lp: _basis_sz(lp, tol, cycles, seed), locals_)
    else:
        raise ValueError("unknown basis mode %r" % mode)
    nP = part.nprimal
    S = np.zeros((nP, nP))
    phibar, phi, mus, Sloc, its = [], [], [], [], []
    for lp, (X, MU, it) in zip(locals_, res):
        phibar.append(X)
        phi.append(X[lp.B])
        mus.append(MU)
        Sk = -0.5 * (MU + MU.T)
        Sloc.append(Sk)
        g = part.primal_map[lp.k]
        S[np.ix_(g, g)] += Sk
        its += it
    if nP:
        try:
            fac = scipy.linalg.cho_factor(S)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError("coarse matrix S_PP is not positive definite") from exc
    else:
        fac = (np.zeros((0, 0)), False)
    return PrimalBasis(phibar, phi, mus, Sloc, S, fac, its)


@dataclass
class Modes:
    """Inner solver choices. ``gtilde`` and ``msd`` accept ``"direct"``,
    ``"pcg"`` or an int cycle count; ``dual`` is ``"direct"`` or ``"mg"``."""
    gtilde: object = "direct"
    msd: object = "direct"
    dual: str = "direct"
    tol_dirichlet: float = 1e-10
    tol_dual: float = 1e-10
    embed_msd: bool = True


class IetiOperator:
    """Interface operators of the dual-primal formulation.

    ``stilde_inv`` applies the inverse of the partially assembled Schur
    complement: a coarse solve with ``S_PP`` plus independent constrained
    patch solves.
    """

    def __init__(self, locals_: list, part: DofPartition, cons: PrimalConstraints,
                 jumps: JumpOperator, basis: PrimalBasis, modes: Modes | None = None):
        self.locals = locals_
        self.part = part
        self.cons = cons
        self.jumps = jumps
        self.basis = basis
        self.modes = modes or Modes()
        self.B = jumps.B
        self.BD = jumps.BD
        self.dual_iterations = []
        self._dual_prec = {}

    @property
    def nlambda(self) -> int:
        return self.B.shape[0]

    # -- building blocks --------------------------------------------------

    def coarse_rhs(self, r) -> np.ndarray:
        out = np.zeros(self.part.nprimal)
        for lp, rk in zip(self.locals, self.part.split(r)):
            np.add.at(out, self.part.primal_map[lp.k], self.basis.phi[lp.k].T @ rk)
        return out

    def coarse_extend(self, c) -> np.ndarray:
        return np.concatenate([self.basis.phi[lp.k] @ c[self.part.primal_map[lp.k]]
                               for lp in self.locals]) if self.locals else np.zeros(0)

    def _dual_mg_prec(self, lp: LocalProblem):
        if lp.k not in self._dual_prec:
            self._dual_prec[lp.k] = lp.reg_mg_operator(1)
        return self._dual_prec[lp.k]

    def solve_dual(self, k: int, r) -> tuple:
        """Minimize ``1/2 w^T S w - r^T w`` over ``{C w = 0}`` on patch ``k``.

        Returns ``(w, iterations)``.
        """
        lp = self.locals[k]
        r = np.asarray(r, float)
        if lp.ntrace == 0 or not np.any(r):
            return np.zeros(lp.ntrace), 0
        phi, C = self.basis.phi[k], lp.C
        if self.modes.dual == "direct":
            rhs = np.zeros(lp.nactive + lp.nprimal)
            rhs[lp.B] = r
            return lp.kkt.solve(rhs)[lp.B], 0
        # make the functional vanish on the primal basis
        r = r - C.T @ (phi.T @ r)
        b = lp.extend(r)
        kernel = None
        if lp.floating:
            kernel = np.ones(lp.nactive)
            kc = b.sum() / lp.nactive
            if abs(kc) > 1e-12 * np.linalg.norm(b):
                b = b - kc
        x, rep = semidefinite_pcg(lp.K, b, self._dual_mg_prec(lp), tol=self.modes.tol_dual,
                                  maxit=500, kernel=kernel)
        if not rep.converged:
            raise RuntimeError("dual solve on patch %d: %s" % (k, rep.flag))
        w = x[lp.B]
        return w - phi @ (C @ w), rep.iterations

    def stilde_inv(self, r) -> np.ndarray:
        r = np.asarray(r, float)
        c = self.basis.coarse_solve(self.coarse_rhs(r)) if self.part.nprimal else np.zeros(0)
        w = self.coarse_extend(c) if self.part.nprimal else np.zeros(self.part.nW)
        res = patch_map(lambda lp: self.solve_dual(lp.k, r[self.part.W_slice(lp.k)]), self.locals)
        for lp, (wk, it) in zip(self.locals, res):
            w[self.part.W_slice(lp.k)] += wk
            if it:
                self.dual_iterations.append(it)
        return w

    def stilde(self, w) -> np.ndarray:
        """Patchwise ``S^(k) w^(k)``; for ``w`` with continuous primal values
        this represents the functional that ``stilde_inv`` maps back to ``w``."""
        return np.concatenate([lp.schur(wk) for lp, wk in zip(self.locals, self.part.split(w))])

    # -- F, d and the preconditioner -------------------------------------

    def apply_F(self, lam) -> np.ndarray:
        return self.B @ self.stilde_inv(self.B.T @ np.asarray(lam, float))

    def rhs(self, g) -> np.ndarray:
        return self.B @ self.stilde_inv(g)

    def apply_msd(self, lam) -> np.ndarray:
        """``B_D E^T S E B_D^T lam`` with ``E`` the dual embedding (identity
        when ``embed_msd`` is off)."""
        y = self.BD.T @ np.asarray(lam, float)
        mode = self.modes.msd

        def one(lp):
            yk = y[self.part.W_slice(lp.k)]
            if lp.ntrace == 0:
                return yk
            if self.modes.embed_msd:
                return lp.E.T @ lp.schur(lp.E @ yk, mode)
            return lp.schur(yk, mode)

        return self.BD @ np.concatenate(patch_map(one, self.locals))

    def F_operator(self):
        n = self.nlambda
        return scipy.sparse.linalg.LinearOperator((n, n), matvec=self.apply_F, dtype=float)

    def msd_operator(self):
        n = self.nlambda
        return scipy.sparse.linalg.LinearOperator((n, n), matvec=self.apply_msd, dtype=float)

    # -- right-hand side and recovery ------------------------------------

    def g_tilde(self):
        """Concatenated ``f_B - K_BI K_II^{-1} f_I`` and inner iteration counts."""
        res = patch_map(lambda lp: lp.g_local(self.modes.gtilde, self.modes.tol_dirichlet), self.locals)
        g = np.concatenate([r[0] for r in res]) if res else np.zeros(0)
        return g, [r[1] for r in res]

    def recover(self, g, lam, interior_mode="direct"):
        """Patch solutions (active dofs) from the multipliers."""
        w = self.stilde_inv(g - self.B.T @ lam)
        out = []
        for lp, wk in zip(self.locals, self.part.split(w)):
            u = np.zeros(lp.nactive)
            u[lp.B] = wk
            y, _ = lp.dirichlet_solve(lp.f[lp.I] - lp.K_IB @ wk, interior_mode,
                                      self.modes.tol_dirichlet)
            u[lp.I] = y
            out.append(u)
        return out
