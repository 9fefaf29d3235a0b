"""Independent reference implementations used only by the tests.

Nothing here calls into the package's numerical kernels: the B-spline
oracle follows the recursive definition, CG is the plain textbook loop and
the saddle/Schur oracles are dense numpy factorizations.
"""
import numpy as np


def cox_de_boor(knots, p, i, x):
    """``N_{i,p}(x)`` by the recursive definition (right-closed last span)."""
    t = np.asarray(knots, float)
    if p == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # x at the right end belongs to the last nonempty span
        last = np.max(np.nonzero(t[:-1] < t[1:])[0])
        return 1.0 if (x == t[-1] and i == last) else 0.0
    out = 0.0
    if t[i + p] > t[i]:
        out += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, p - 1, i, x)
    if t[i + p + 1] > t[i + 1]:
        out += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, p - 1, i + 1, x)
    return out


def cox_de_boor_deriv(knots, p, i, x):
    t = np.asarray(knots, float)
    out = 0.0
    if t[i + p] > t[i]:
        out += p / (t[i + p] - t[i]) * cox_de_boor(t, p - 1, i, x)
    if t[i + p + 1] > t[i + 1]:
        out -= p / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, p - 1, i + 1, x)
    return out


def all_basis(knots, p, x):
    n = len(knots) - p - 1
    return np.array([cox_de_boor(knots, p, i, x) for i in range(n)])


def greville_prolongation(coarse_knots, fine_knots, p):
    """Coarse-to-fine transfer by interpolation at the fine Greville points."""
    tf = np.asarray(fine_knots, float)
    nf = len(tf) - p - 1
    g = np.array([tf[i + 1:i + p + 1].mean() for i in range(nf)])
    A = np.array([all_basis(tf, p, x) for x in g])
    Bc = np.array([all_basis(coarse_knots, p, x) for x in g])
    return np.linalg.solve(A, Bc)


def textbook_cg(A, b, tol, maxit=10000):
    """Unpreconditioned CG, returns ``(x, iterations)``."""
    A = np.asarray(A, float)
    x = np.zeros_like(b, dtype=float)
    r = b - A @ x
    p = r.copy()
    rr = r @ r
    bn = np.linalg.norm(b)
    k = 0
    while np.sqrt(rr) > tol * bn and k < maxit:
        Ap = A @ p
        a = rr / (p @ Ap)
        x = x + a * p
        r = r - a * Ap
        rr_new = r @ r
        p = r + rr_new / rr * p
        rr = rr_new
        k += 1
    return x, k


def dense_kkt(K, C, f, g):
    K = np.asarray(K, float)
    C = np.atleast_2d(np.asarray(C, float))
    n, m = K.shape[0], C.shape[0]
    A = np.block([[K, C.T], [C, np.zeros((m, m))]])
    sol = np.linalg.solve(A, np.concatenate([f, g]))
    return sol[:n], sol[n:]


def dense_schur(K, I, B):
    K = np.asarray(K, float)
    return K[np.ix_(B, B)] - K[np.ix_(B, I)] @ np.linalg.solve(K[np.ix_(I, I)], K[np.ix_(I, B)])


def dense_constrained_minimizer(S, C, r):
    """argmin 1/2 w^T S w - r^T w subject to C w = 0."""
    w, _ = dense_kkt(S, C, r, np.zeros(np.atleast_2d(C).shape[0]))
    return w


def symmetry_defect(op, n, rng, trials=5):
    worst = 0.0
    for _ in range(trials):
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        a, b = y @ (op @ x), x @ (op @ y)
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
    return worst
