"""Sparse SPD factorization and the Krylov solvers used by the IETI-DP engine.

Operators are plain scipy sparse matrices or :class:`scipy.sparse.linalg.LinearOperator`
instances; :func:`as_operator` wraps bare callables. All solvers start from a
zero initial guess and stop on the relative reduction of the unpreconditioned
residual norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

CONVERGED = "converged"
MAXIT = "max-iterations"
BREAKDOWN = "breakdown"


class NotSPDError(np.linalg.LinAlgError):
    pass


class InconsistentRHSError(ValueError):
    pass


class PreconditionerOrderError(RuntimeError):
    """Negative curvature in the non-standard inner product of SZ-PCG or
    BPCG, i.e. the required preconditioner ordering does not hold."""


@dataclass
class SolveReport:
    iterations: int
    residual: float
    flag: str
    history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.flag == CONVERGED


def as_operator(A, n=None) -> scipy.sparse.linalg.LinearOperator:
    """Wrap a matrix, LinearOperator or callable as a square LinearOperator."""
    if isinstance(A, scipy.sparse.linalg.LinearOperator):
        return A
    if callable(A) and not hasattr(A, "shape"):
        if n is None:
            raise ValueError("dimension required for callable operators")
        return scipy.sparse.linalg.LinearOperator((n, n), matvec=A, dtype=float)
    return scipy.sparse.linalg.aslinearoperator(A)


def identity(n: int) -> scipy.sparse.linalg.LinearOperator:
    return scipy.sparse.linalg.LinearOperator((n, n), matvec=lambda x: np.array(x, float).ravel(),
                                              dtype=float)


class DirectFactor:
    """Banded Cholesky factorization of a sparse SPD matrix.

    The lexicographic tensor numbering keeps the bandwidth at ``O(sqrt(n) p)``,
    so the band storage stays small for patch-sized problems.
    """

    def __init__(self, A):
        A = scipy.sparse.csr_matrix(A)
        n = A.shape[0]
        self.n = n
        self.shape = (n, n)
        if n == 0:
            self._cb = None
            return
        coo = scipy.sparse.triu(A).tocoo()
        u = int((coo.col - coo.row).max()) if coo.nnz else 0
        ab = np.zeros((u + 1, n))
        for k in range(u + 1):
            ab[u - k, k:] = A.diagonal(k)
        try:
            self._cb = scipy.linalg.cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError("matrix is not symmetric positive definite") from exc
        self.bandwidth = u

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, float)
        if self.n == 0:
            return np.zeros_like(b)
        return scipy.linalg.cho_solve_banded((self._cb, False), b)

    __call__ = solve

    def __matmul__(self, b):
        return self.solve(b)

    def as_operator(self) -> scipy.sparse.linalg.LinearOperator:
        return scipy.sparse.linalg.LinearOperator(self.shape, matvec=self.solve,
                                                  matmat=self.solve, dtype=float)


def factorize(A) -> DirectFactor:
    return DirectFactor(A)


def _true_residual(A, b, x) -> float:
    bn = np.linalg.norm(b)
    return float(np.linalg.norm(b - A @ x) / bn) if bn > 0 else 0.0


def pcg(A, b, M=None, tol: float = 1e-6, maxit: int = 1000, callback=None):
    """Preconditioned CG for SPD ``A`` with SPD preconditioner action ``M``
    (approximating ``A^{-1}``).

    Stops once ``||b - A x|| <= tol ||b||`` (recursively updated residual).
    Returns ``(x, SolveReport)``; the report carries the recomputed residual.
    """
    b = np.asarray(b, float)
    n = b.size
    A = as_operator(A, n)
    M = identity(n) if M is None else as_operator(M, n)
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, CONVERGED, [0.0])
    r = b.copy()
    z = M @ r
    rz = r @ z
    p = z.copy()
    hist = [1.0]
    flag = MAXIT
    it = 0
    while it < maxit:
        q = A @ p
        pq = p @ q
        if not np.isfinite(pq) or pq <= 0.0:
            flag = BREAKDOWN
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        it += 1
        rel = np.linalg.norm(r) / bnorm
        hist.append(rel)
        if callback is not None:
            callback(x)
        if not np.isfinite(rel):
            flag = BREAKDOWN
            break
        if rel <= tol:
            flag = CONVERGED
            break
        z = M @ r
        rz_new = r @ z
        if not np.isfinite(rz_new) or rz_new <= 0.0:
            flag = BREAKDOWN
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(it, _true_residual(A, b, x), flag, hist)


def semidefinite_pcg(A, b, M=None, tol: float = 1e-6, maxit: int = 1000, kernel=None):
    """PCG on a symmetric positive semidefinite system with consistent rhs.

    ``kernel`` (vector or ``(n, k)`` array) spans the null space of ``A``; if
    given, ``b`` is checked for consistency. Started from zero, the iterates
    stay in the range of ``M A`` and converge to one of the minimizers.
    """
    b = np.asarray(b, float)
    if kernel is not None:
        Z = np.asarray(kernel, float).reshape(b.size, -1)
        Q, _ = np.linalg.qr(Z)
        comp = np.linalg.norm(Q.T @ b)
        if comp > 1e-8 * max(np.linalg.norm(b), np.finfo(float).tiny):
            raise InconsistentRHSError("right-hand side has a component in the kernel")
    return pcg(A, b, M, tol, maxit)


class SZSolver:
    """CG with the Schoeberl-Zulehner preconditioner for

        [[K, C^T], [C, 0]] [x; mu] = [f; g].

    Requires ``Khat > K`` (``Khat_inv`` approximates ``K^{-1}`` from below)
    and ``Hhat < C Khat^{-1} C^T``. ``Hhat`` defaults to
    ``0.99 C Khat^{-1} C^T`` computed exactly from ``C.shape[0]`` applications.
    """

    def __init__(self, K, C, Khat_inv, Hhat=None, hscale: float = 0.99):
        self.K = K
        C = scipy.sparse.csr_matrix(C)
        self.C = C
        m, n = C.shape
        self.n, self.m = n, m
        self.Kinv = as_operator(Khat_inv, n)
        Ct = C.T.toarray()
        self.Z = np.column_stack([self.Kinv @ Ct[:, j] for j in range(m)]) if m else np.zeros((n, 0))
        if Hhat is None:
            H = C @ self.Z
            Hhat = hscale * 0.5 * (H + H.T)
        self.Hhat = np.asarray(Hhat, float)
        self._hfac = scipy.linalg.cho_factor(self.Hhat)

    def _apply_A(self, x, y):
        return self.K @ x + self.C.T @ y, self.C @ x

    def _apply_Pinv(self, rx, ry):
        xh = self.Kinv @ rx
        y = scipy.linalg.cho_solve(self._hfac, self.C @ xh - ry)
        return xh - self.Z @ y, y

    def solve(self, f, g, tol: float = 1e-12, maxit: int = 500):
        n, m = self.n, self.m
        f = np.zeros(n) if f is None else np.asarray(f, float)
        g = np.zeros(m) if g is None else np.asarray(g, float)
        x, y = np.zeros(n), np.zeros(m)
        bnorm = np.sqrt(f @ f + g @ g)
        if bnorm == 0.0:
            return (x, y), SolveReport(0, 0.0, CONVERGED, [0.0])
        # residual (unpreconditioned) and preconditioned residual
        Rx, Ry = f.copy(), g.copy()
        zx, zy = self._apply_Pinv(Rx, Ry)
        Azx, Azy = self._apply_A(zx, zy)
        # D z = P z - A z = R - A z
        gamma = zx @ (Rx - Azx) + zy @ (Ry - Azy)
        gamma0 = gamma
        if gamma <= 0.0:
            raise PreconditionerOrderError("non-positive initial D-norm in SZ-PCG")
        px, py = zx.copy(), zy.copy()
        Apx, Apy = Azx.copy(), Azy.copy()
        hist = [1.0]
        flag, it = MAXIT, 0
        while it < maxit:
            qx, qy = self._apply_Pinv(Apx, Apy)
            # <P^{-1} A p, p>_D = p.A p - (A p).q
            delta = (px @ Apx + py @ Apy) - (Apx @ qx + Apy @ qy)
            if not np.isfinite(delta):
                flag = BREAKDOWN
                break
            if delta <= 0.0:
                raise PreconditionerOrderError("negative curvature in SZ-PCG")
            alpha = gamma / delta
            x += alpha * px
            y += alpha * py
            Rx -= alpha * Apx
            Ry -= alpha * Apy
            # recomputed rather than updated: the D-norm below is a small
            # difference and loses accuracy once z drifts from P^{-1} R
            zx, zy = self._apply_Pinv(Rx, Ry)
            it += 1
            rel = np.sqrt(Rx @ Rx + Ry @ Ry) / bnorm
            hist.append(rel)
            if rel <= tol:
                flag = CONVERGED
                break
            Azx, Azy = self._apply_A(zx, zy)
            gamma_new = zx @ (Rx - Azx) + zy @ (Ry - Azy)
            if gamma_new < -1e-13 * gamma0:
                raise PreconditionerOrderError("negative D-norm in SZ-PCG")
            if gamma_new <= 0.0:
                flag = BREAKDOWN
                break
            beta = gamma_new / gamma
            gamma = gamma_new
            px = zx + beta * px
            py = zy + beta * py
            Apx = Azx + beta * Apx
            Apy = Azy + beta * Apy
        rx, ry = self._apply_A(x, y)
        true = np.sqrt(np.sum((f - rx) ** 2) + np.sum((g - ry) ** 2)) / bnorm
        return (x, y), SolveReport(it, float(true), flag, hist)


def sz_pcg(K, C, Khat_inv, Hhat, f, g, tol: float = 1e-12, maxit: int = 500):
    """One-shot wrapper around :class:`SZSolver`; returns ``((x, mu), report)``."""
    return SZSolver(K, C, Khat_inv, Hhat).solve(f, g, tol, maxit)


def bpcg(K, B, Khat_inv, Fhat_inv, f, g=None, tol: float = 1e-6, maxit: int = 1000):
    """Bramble-Pasciak CG for ``[[K, B^T], [B, 0]] [u; lam] = [f; g]``.

    ``Khat_inv`` is the inverse of a preconditioner ``Khat < K`` and
    ``Fhat_inv`` an SPD approximation of the inverse Schur complement
    ``(B K^{-1} B^T)^{-1}``. CG runs on the block-triangularly preconditioned
    system in the inner product ``diag(K - Khat, Fhat)``; neither ``Khat`` nor
    ``Fhat`` is ever applied, only their inverses.
    """
    f = np.asarray(f, float)
    n = f.size
    B = scipy.sparse.csr_matrix(B)
    m = B.shape[0]
    g = np.zeros(m) if g is None else np.asarray(g, float)
    K = as_operator(K, n)
    Kinv = as_operator(Khat_inv, n)
    Finv = as_operator(Fhat_inv, m)

    def apply_A(u, l):
        return K @ u + B.T @ l, B @ u

    def apply_Pinv(ru, rl):
        zu = Kinv @ ru
        return zu, Finv @ (B @ zu - rl)

    def apply_H(zu, ru, rl):
        # H z for z = P^{-1} r, using Khat zu = ru and Fhat zl = B zu - rl
        return K @ zu - ru, B @ zu - rl

    u, lam = np.zeros(n), np.zeros(m)
    bnorm = np.sqrt(f @ f + g @ g)
    if bnorm == 0.0:
        return (u, lam), SolveReport(0, 0.0, CONVERGED, [0.0])
    Ru, Rl = f.copy(), g.copy()
    zu, zl = apply_Pinv(Ru, Rl)
    Hzu, Hzl = apply_H(zu, Ru, Rl)
    gamma = zu @ Hzu + zl @ Hzl
    gamma0 = gamma
    if gamma <= 0.0:
        raise PreconditionerOrderError("non-positive initial BP-norm")
    pu, pl = zu.copy(), zl.copy()
    hist = [1.0]
    flag, it = MAXIT, 0
    while it < maxit:
        su, sl = apply_A(pu, pl)
        qu, ql = apply_Pinv(su, sl)
        Hqu, Hql = apply_H(qu, su, sl)
        delta = pu @ Hqu + pl @ Hql
        if not np.isfinite(delta):
            flag = BREAKDOWN
            break
        if delta <= 0.0:
            raise PreconditionerOrderError("negative curvature in BPCG")
        alpha = gamma / delta
        u += alpha * pu
        lam += alpha * pl
        Ru -= alpha * su
        Rl -= alpha * sl
        zu -= alpha * qu
        zl -= alpha * ql
        Hzu -= alpha * Hqu
        Hzl -= alpha * Hql
        it += 1
        rel = np.sqrt(Ru @ Ru + Rl @ Rl) / bnorm
        hist.append(rel)
        if rel <= tol:
            flag = CONVERGED
            break
        gamma_new = zu @ Hzu + zl @ Hzl
        if gamma_new < -1e-13 * gamma0:
            raise PreconditionerOrderError("negative BP-norm in BPCG")
        if gamma_new <= 0.0:
            flag = BREAKDOWN
            break
        beta = gamma_new / gamma
        gamma = gamma_new
        pu = zu + beta * pu
        pl = zl + beta * pl
    ru, rl = apply_A(u, lam)
    true = np.sqrt(np.sum((f - ru) ** 2) + np.sum((g - rl) ** 2)) / bnorm
    return (u, lam), SolveReport(it, float(true), flag, hist)


def lanczos_extremes(A, Pinv, n: int, steps: int = 20, seed: int = 0):
    """Extreme eigenvalue estimates of ``Pinv A`` from the Lanczos tridiagonal
    matrix implied by the PCG coefficients.

    Returns ``(lmin, lmax, ok)``; ``ok`` is False on breakdown.
    """
    A = as_operator(A, n)
    Pinv = as_operator(Pinv, n)
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(n)
    z = Pinv @ r
    rz = r @ z
    rz0 = rz
    p = z.copy()
    alphas, betas = [], []
    ok = True
    for _ in range(min(steps, n)):
        q = A @ p
        pq = p @ q
        if not np.isfinite(pq) or pq <= 0.0:
            ok = False
            break
        alpha = rz / pq
        alphas.append(alpha)
        r = r - alpha * q
        z = Pinv @ r
        rz_new = r @ z
        if not np.isfinite(rz_new) or rz_new < 0.0:
            ok = False
            break
        if rz_new <= 1e-28 * rz0:
            break  # Krylov space exhausted: Ritz values are exact
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    k = len(alphas)
    if k == 0:
        return 0.0, 0.0, False
    diag = np.empty(k)
    diag[0] = 1.0 / alphas[0]
    for i in range(1, k):
        diag[i] = 1.0 / alphas[i] + betas[i - 1] / alphas[i - 1]
    off = np.array([np.sqrt(betas[i]) / alphas[i] for i in range(k - 1)])
    ev = scipy.linalg.eigvalsh_tridiagonal(diag, off) if k > 1 else diag
    return float(ev.min()), float(ev.max()), ok


def _power_extremes(A, Pinv, n: int, iters: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    T = lambda v: Pinv @ (A @ v)
    v = rng.standard_normal(n)
    lmax = 0.0
    for _ in range(iters):
        w = T(v)
        lmax = np.linalg.norm(w) / np.linalg.norm(v)
        v = w / np.linalg.norm(w)
    v = rng.standard_normal(n)
    mu = 0.0
    for _ in range(iters):
        w = lmax * v - T(v)
        mu = np.linalg.norm(w) / np.linalg.norm(v)
        v = w / np.linalg.norm(w)
    return lmax - mu, lmax


def calibrate_spd_order(A, Pinv, direction: str = "above", margin: float = 0.01,
                        steps: int = 20, seed: int = 0, n=None) -> float:
    """Scale ``s`` such that ``s P > A`` (``direction="above"``) or
    ``s P < A`` (``"below"``), where ``Pinv`` is the inverse action of ``P``.

    The extreme eigenvalues of ``Pinv A`` are estimated by ``steps`` Lanczos
    steps; ``s = lmax (1 + margin)`` or ``s = lmin (1 - margin)``.
    """
    if n is None:
        n = A.shape[0]
    lmin, lmax, ok = lanczos_extremes(A, Pinv, n, steps, seed)
    if not ok:
        lmin, lmax = _power_extremes(as_operator(A, n), as_operator(Pinv, n), n, seed=seed)
    if direction == "above":
        return lmax * (1.0 + margin)
    if direction == "below":
        return lmin * (1.0 - margin)
    raise ValueError("direction must be 'above' or 'below'")


def scaled(op, s: float, n=None) -> scipy.sparse.linalg.LinearOperator:
    """The action ``x -> op(x) / s``, i.e. the inverse of ``s * P`` when ``op``
    is ``P^{-1}``."""
    op = as_operator(op, n)
    return scipy.sparse.linalg.LinearOperator(op.shape, matvec=lambda x: (op @ x) / s, dtype=float)


def write_matrix_market(path, A, comment: str = "") -> None:
    """Write a symmetric sparse matrix in coordinate Matrix Market format."""
    scipy.io.mmwrite(str(path), scipy.sparse.coo_matrix(A), comment=comment,
                     symmetry="symmetric")


def read_matrix_market(path) -> scipy.sparse.csr_matrix:
    return scipy.sparse.csr_matrix(scipy.io.mmread(str(path)))
