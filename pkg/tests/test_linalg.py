import numpy as np
import pytest
import scipy.sparse
import scipy.sparse.linalg
from hypothesis import given
from hypothesis import strategies as st

from ietidp.assembly import assemble_stiffness
from ietidp.geometry import build_quarter_annulus
from ietidp.linalg import (BREAKDOWN, MAXIT, InconsistentRHSError, NotSPDError,
                           PreconditionerOrderError, as_operator, bpcg, calibrate_spd_order,
                           factorize, lanczos_extremes, pcg, read_matrix_market, scaled,
                           semidefinite_pcg, sz_pcg, write_matrix_market)
from oracles import dense_kkt, symmetry_defect, textbook_cg


def laplace_1d(n, neumann=False):
    """Hat-function stiffness with ``n`` spans on [0,1]; Dirichlet removes both ends."""
    h = 1.0 / n
    main = np.full(n + 1, 2.0)
    main[[0, -1]] = 1.0
    A = scipy.sparse.diags([-np.ones(n), main, -np.ones(n)], [-1, 0, 1]) / h
    A = A.tocsr()
    return A if neumann else A[1:-1][:, 1:-1].tocsr()


def laplace_2d(n):
    T = laplace_1d(n)
    I = scipy.sparse.identity(T.shape[0])
    return (scipy.sparse.kron(I, T) + scipy.sparse.kron(T, I)).tocsr()


def jacobi(A):
    d = A.diagonal()
    return as_operator(lambda x: x / d, A.shape[0])


# ---------------------------------------------------------------- factorize

def test_factorize_identity_and_diagonal():
    np.testing.assert_allclose(factorize(scipy.sparse.identity(4)).solve(np.arange(4.0)), np.arange(4.0))
    np.testing.assert_allclose(factorize(scipy.sparse.diags([1.0, 2.0, 3.0])).solve([1, 2, 3]), [1, 1, 1])


def test_factorize_assembled_one_dof_stiffness():
    # 1D hats, two spans, both ends removed
    np.testing.assert_allclose(factorize(laplace_1d(2)).solve([2.0]), [0.5])


def test_factorize_rejects_indefinite():
    with pytest.raises(NotSPDError):
        factorize(scipy.sparse.diags([1.0, -1.0, 2.0]))
    with pytest.raises(NotSPDError):
        factorize(laplace_1d(4, neumann=True))


def test_factorize_machine_precision(rng):
    A = laplace_2d(12)
    F = factorize(A)
    for _ in range(3):
        b = rng.standard_normal(A.shape[0])
        assert np.linalg.norm(A @ F.solve(b) - b) <= 1e-12 * np.linalg.norm(b) * 1e2


def test_factorize_multiple_rhs(rng):
    A = laplace_2d(5)
    B = rng.standard_normal((A.shape[0], 3))
    np.testing.assert_allclose(A @ factorize(A).solve(B), B, atol=1e-11)


# ---------------------------------------------------------------- pcg

def test_pcg_identity_one_step(rng):
    b = rng.standard_normal(7)
    x, rep = pcg(scipy.sparse.identity(7), b, tol=1e-12)
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(x, b)


def test_pcg_diagonal_finite_termination():
    x, rep = pcg(scipy.sparse.diags([1.0, 2.0, 3.0]), np.ones(3), tol=1e-12)
    assert rep.iterations <= 3
    np.testing.assert_allclose(x, [1, 0.5, 1 / 3], atol=1e-12)


def test_pcg_matches_textbook_cg_iterations(rng):
    A = laplace_1d(2 ** 6)
    b = rng.standard_normal(A.shape[0])
    x, rep = pcg(A, b, tol=1e-8, maxit=1000)
    x_ref, k_ref = textbook_cg(A.toarray(), b, 1e-8)
    assert rep.iterations == k_ref
    np.testing.assert_allclose(x, x_ref, rtol=1e-8, atol=1e-10)


def test_pcg_zero_rhs():
    x, rep = pcg(laplace_1d(8), np.zeros(7))
    assert rep.iterations == 0 and np.all(x == 0) and rep.converged


def test_pcg_maxit_is_reported_not_raised(rng):
    A = laplace_1d(64)
    _, rep = pcg(A, rng.standard_normal(63), tol=1e-12, maxit=3)
    assert rep.flag == MAXIT and rep.iterations == 3


def test_pcg_breakdown_on_indefinite():
    _, rep = pcg(scipy.sparse.diags([1.0, -1.0]), np.array([1.0, 1.0]), tol=1e-12)
    assert rep.flag == BREAKDOWN


def test_pcg_reported_residual_is_true_residual(rng):
    A = laplace_2d(10)
    b = rng.standard_normal(A.shape[0])
    x, rep = pcg(A, b, jacobi(A), tol=1e-6)
    true = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
    assert abs(rep.residual - true) <= 10 * np.finfo(float).eps * true + 1e-15
    assert rep.residual <= 1.01e-6


@given(st.integers(0, 2 ** 31 - 1))
def test_pcg_iterations_invariant_under_permutation(seed):
    rng = np.random.default_rng(seed)
    A = laplace_2d(6) + scipy.sparse.diags(rng.uniform(0, 5, 25))
    b = rng.standard_normal(25)
    perm = rng.permutation(25)
    Ap = A[perm][:, perm]
    _, r1 = pcg(A, b, jacobi(A), tol=1e-8)
    _, r2 = pcg(Ap, b[perm], jacobi(Ap), tol=1e-8)
    assert r1.iterations == r2.iterations


# ---------------------------------------------------------------- semidefinite

def _floating_patch_stiffness():
    mp = build_quarter_annulus(8, 4, 2, 2)
    pt = mp.patches[9]
    assert not mp.dirichlet_sides(9)
    return assemble_stiffness(pt.space, pt.geo)


def test_semidefinite_floating_patch(rng):
    K = _floating_patch_stiffness()
    n = K.shape[0]
    v = rng.standard_normal(n)
    b = K @ v
    iterates = []
    x, rep = pcg(K, b, tol=1e-10, maxit=2000, callback=lambda xk: iterates.append(xk.copy()))
    assert rep.converged
    d = x - v
    assert np.ptp(d) <= 1e-6 * np.abs(v).max()
    # iterates from zero stay orthogonal to the constants
    for xk in iterates:
        assert abs(xk.sum()) <= 1e-8 * np.sqrt(n) * np.linalg.norm(xk)
    x2, _ = semidefinite_pcg(K, b, tol=1e-10, maxit=2000, kernel=np.ones(n))
    np.testing.assert_allclose(x2, x)


def test_semidefinite_inconsistent_rhs():
    K = _floating_patch_stiffness()
    with pytest.raises(InconsistentRHSError):
        semidefinite_pcg(K, np.ones(K.shape[0]), kernel=np.ones(K.shape[0]))


def test_semidefinite_zero_rhs():
    x, rep = semidefinite_pcg(laplace_1d(4, neumann=True), np.zeros(5), kernel=np.ones(5))
    assert rep.iterations == 0 and np.all(x == 0)


def test_semidefinite_diagonal_example():
    x, rep = semidefinite_pcg(scipy.sparse.diags([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 2.0]),
                              tol=1e-12, kernel=np.array([1.0, 0, 0]))
    assert rep.converged
    np.testing.assert_allclose(x, [0.0, 1.0, 1.0], atol=1e-12)
    assert x[0] == 0.0


# ---------------------------------------------------------------- SZ-PCG

def test_sz_small_example():
    K = scipy.sparse.diags([2.0, 2.0])
    C = np.array([[1.0, 1.0]])
    (x, mu), rep = sz_pcg(K, C, scipy.sparse.identity(2) / 3.0, None, np.zeros(2), np.ones(1))
    assert rep.converged
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(mu, [-1.0], atol=1e-12)


def test_sz_zero_rhs():
    K = scipy.sparse.diags([2.0, 2.0])
    (x, mu), rep = sz_pcg(K, np.array([[1.0, 1.0]]), scipy.sparse.identity(2) / 3.0, None,
                          np.zeros(2), np.zeros(1))
    assert rep.iterations == 0 and np.all(x == 0) and np.all(mu == 0)


def test_sz_detects_order_violation():
    K = scipy.sparse.diags([2.0, 2.0])
    with pytest.raises(PreconditionerOrderError):
        # Khat = I < K violates the required ordering
        sz_pcg(K, np.array([[1.0, 0.0]]), scipy.sparse.identity(2), None, np.array([1.0, -1.0]),
               np.ones(1), maxit=50)


def _random_saddle(rng, n, m, floating):
    A = laplace_1d(n, neumann=True) if floating else laplace_1d(n + 1)
    A = (A + scipy.sparse.diags(rng.uniform(0, 0.5, A.shape[0]))).tocsr() if not floating else A
    N = A.shape[0]
    C = rng.standard_normal((m, N))
    if floating:
        C[0] = 1.0 / N
    return A, C


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("floating", [False, True])
def test_sz_matches_dense_kkt(seed, floating):
    rng = np.random.default_rng(seed)
    K, C = _random_saddle(rng, int(rng.integers(10, 150)), int(rng.integers(1, 6)), floating)
    n, m = K.shape[0], C.shape[0]
    P = jacobi(K)
    s = calibrate_spd_order(K, P, "above", 0.01, steps=n, n=n)
    f, g = rng.standard_normal(n), rng.standard_normal(m)
    (x, mu), rep = sz_pcg(K, C, scaled(P, s), None, f, g, tol=1e-13, maxit=5000)
    x_ref, mu_ref = dense_kkt(K.toarray(), C, f, g)
    assert np.abs(x - x_ref).max() <= 1e-8 * np.abs(x_ref).max()
    assert np.abs(mu - mu_ref).max() <= 1e-8 * np.abs(mu_ref).max()
    assert np.linalg.norm(C @ x - g) <= 1e-12 * np.linalg.norm(g) + 1e-10


# ---------------------------------------------------------------- BPCG

def test_bpcg_small_example():
    K = scipy.sparse.diags([2.0, 2.0])
    B = np.array([[1.0, -1.0]])
    f = np.array([1.0, 3.0])
    (u, lam), rep = bpcg(K, B, 2.0 * scipy.sparse.identity(2), np.array([[1.0]]), f, tol=1e-12)
    assert rep.converged
    u_ref, lam_ref = dense_kkt(K.toarray(), B, f, np.zeros(1))
    np.testing.assert_allclose(u, u_ref, atol=1e-12)
    np.testing.assert_allclose(lam, lam_ref, atol=1e-12)
    assert abs(u[0] - u[1]) <= 1e-12


def test_bpcg_zero_rhs():
    (u, lam), rep = bpcg(scipy.sparse.diags([2.0, 2.0]), np.array([[1.0, -1.0]]),
                         2.0 * scipy.sparse.identity(2), np.eye(1), np.zeros(2))
    assert rep.iterations == 0 and np.all(u == 0) and np.all(lam == 0)


def test_bpcg_detects_order_violation():
    # Khat = 4 I > K breaks the required ordering
    with pytest.raises(PreconditionerOrderError):
        bpcg(scipy.sparse.diags([2.0, 2.0]), np.array([[1.0, -1.0]]), 0.25 * scipy.sparse.identity(2),
             np.eye(1), np.array([1.0, 3.0]), maxit=50)


@pytest.mark.parametrize("seed", range(6))
def test_bpcg_matches_dense_kkt(seed):
    rng = np.random.default_rng(seed)
    K, B = _random_saddle(rng, int(rng.integers(10, 150)), int(rng.integers(1, 8)), False)
    n, m = K.shape[0], B.shape[0]
    P = jacobi(K)
    s = calibrate_spd_order(K, P, "below", 0.01, steps=n, n=n)
    Kd = K.toarray()
    Finv = np.linalg.inv(B @ np.linalg.solve(Kd, B.T))
    f = rng.standard_normal(n)
    (u, lam), rep = bpcg(K, B, scaled(P, s), Finv, f, tol=1e-13, maxit=5000)
    u_ref, lam_ref = dense_kkt(Kd, B, f, np.zeros(m))
    assert np.abs(u - u_ref).max() <= 1e-8 * np.abs(u_ref).max()
    assert np.abs(lam - lam_ref).max() <= 1e-8 * np.abs(lam_ref).max()
    true = np.sqrt(np.sum((Kd @ u + B.T @ lam - f) ** 2) + np.sum((B @ u) ** 2)) / np.linalg.norm(f)
    assert abs(rep.residual - true) <= 1e-14


# ---------------------------------------------------------------- calibration

def test_calibrate_diagonal_example():
    A = scipy.sparse.diags([1.0, 2.0])
    s = calibrate_spd_order(A, scipy.sparse.identity(2), "above", 0.01)
    assert abs(s - 2.02) <= 1e-12
    s = calibrate_spd_order(A, scipy.sparse.identity(2), "below", 0.01)
    assert abs(s - 0.99) <= 1e-12


@pytest.mark.parametrize("direction,ref", [("above", 1.01), ("below", 0.99)])
def test_calibrate_same_operator(direction, ref):
    A = laplace_2d(6)
    s = calibrate_spd_order(A, factorize(A).as_operator(), direction, 0.01)
    assert abs(s - ref) <= 1e-8


@pytest.mark.parametrize("direction", ["above", "below"])
def test_calibrated_ordering_holds_on_random_rayleigh_quotients(direction, rng):
    A = laplace_2d(8)
    n = A.shape[0]
    d = A.diagonal()
    s = calibrate_spd_order(A, jacobi(A), direction, 0.01)
    for _ in range(100):
        x = rng.standard_normal(n)
        q = (x @ (A @ x)) / (s * (x @ (d * x)))
        assert q < 1 if direction == "above" else q > 1


def test_calibrate_rejects_unknown_direction():
    with pytest.raises(ValueError):
        calibrate_spd_order(scipy.sparse.identity(2), scipy.sparse.identity(2), "sideways")


def test_lanczos_extremes_exact_for_small_spectrum():
    A = scipy.sparse.diags([1.0, 4.0, 9.0])
    lmin, lmax, ok = lanczos_extremes(A, scipy.sparse.identity(3), 3, steps=10)
    assert ok
    assert abs(lmin - 1.0) <= 1e-10 and abs(lmax - 9.0) <= 1e-10


# ---------------------------------------------------------------- operators

def test_operator_linearity_and_symmetry(rng):
    A = laplace_2d(5)
    op = factorize(A).as_operator()
    x, y = rng.standard_normal(A.shape[0]), rng.standard_normal(A.shape[0])
    np.testing.assert_allclose(op @ (x + y), op @ x + op @ y, atol=1e-10)
    assert symmetry_defect(op, A.shape[0], rng) <= 1e-12


def test_matrix_market_round_trip(tmp_path):
    A = laplace_2d(4)
    path = tmp_path / "A.mtx"
    write_matrix_market(path, A, comment="2d laplace")
    text = path.read_text().splitlines()
    assert text[0].startswith("%%MatrixMarket matrix coordinate real symmetric")
    B = read_matrix_market(path)
    assert abs(A - B).max() == 0.0
