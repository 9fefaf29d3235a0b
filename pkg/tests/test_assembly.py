import math

import numpy as np
import pytest
import scipy.sparse.linalg

from ietidp.assembly import (AssemblyError, assemble_load, assemble_parameter_mass,
                             assemble_stiffness, eliminate_dirichlet, l2_error_sq, mass_1d)
from ietidp.geometry import BoxMap, build_box_grid, build_quarter_annulus
from ietidp.problems import annulus_manufactured
from ietidp.splines import KnotVector, TensorSplineSpace, collocation_matrix, uniform_knots

K1_TWO_SPANS = np.array([[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]])
M1_TWO_SPANS = np.array([[2.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 2.0]]) / 12.0
M1_ONE_SPAN = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
K1_ONE_SPAN = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _gauss_grid(space, nq=6):
    """Physical-free quadrature oracle on the parameter domain: nodes and
    weights per span, independent of the assembly's own quadrature."""
    gx, gw = np.polynomial.legendre.leggauss(nq)
    pts, wts = [], []
    for kv in space.kvs:
        m = kv.mesh
        a, b = m[:-1, None], m[1:, None]
        pts.append((0.5 * (a + b) + 0.5 * (b - a) * gx).ravel())
        wts.append((0.5 * (b - a) * gw).ravel())
    XI, ETA = np.meshgrid(pts[0], pts[1])
    W = np.outer(wts[1], wts[0])
    return XI.ravel(), ETA.ravel(), W.ravel()


def test_stiffness_tensor_form_of_1d_hat_example():
    # identity geometry: K = M_y (x) K_x + K_y (x) M_x with the 1D hat matrices
    space = TensorSplineSpace((uniform_knots(1, 2), uniform_knots(1, 1)))
    K = assemble_stiffness(space, BoxMap()).toarray()
    ref = np.kron(M1_ONE_SPAN, K1_TWO_SPANS) + np.kron(K1_ONE_SPAN, M1_TWO_SPANS)
    np.testing.assert_allclose(K, ref, atol=1e-14)


def test_bilinear_element_stiffness():
    space = TensorSplineSpace((uniform_knots(1, 1),) * 2)
    K = assemble_stiffness(space, BoxMap()).toarray()
    ref = np.array([[4, -1, -1, -2], [-1, 4, -2, -1], [-1, -2, 4, -1], [-2, -1, -1, 4]]) / 6.0
    np.testing.assert_allclose(K, ref, atol=1e-14)
    np.testing.assert_allclose(K.sum(axis=1), 0, atol=1e-14)


@pytest.mark.parametrize("p,L", [(1, 1), (2, 2), (3, 2)])
def test_stiffness_symmetric_and_kernel_on_annulus(p, L):
    mp = build_quarter_annulus(8, 4, p, L)
    for k in (0, 9, 18):
        K = assemble_stiffness(mp.patches[k].space, mp.patches[k].geo)
        norm = abs(K).max()
        assert abs(K - K.T).max() <= 1e-12 * norm
        assert np.abs(K @ np.ones(K.shape[0])).max() <= 1e-10 * norm


def _tensor_rows(space, xi, eta, d0, d1):
    A0 = collocation_matrix(space.kvs[0], xi, d0).toarray()
    A1 = collocation_matrix(space.kvs[1], eta, d1).toarray()
    return np.einsum("qj,qi->qji", A1, A0).reshape(len(xi), -1)


@pytest.mark.parametrize("nq,tol", [(3, 1e-12), (10, 1e-4)])
def test_stiffness_matches_quadrature_oracle_on_annulus(rng, nq, tol):
    mp = build_quarter_annulus(8, 4, 2, 1)
    pt = mp.patches[10]
    K = assemble_stiffness(pt.space, pt.geo)
    xi, eta, w = _gauss_grid(pt.space, nq=nq)
    J = pt.geo.jacobian(xi, eta)
    det = np.linalg.det(J)
    ref_grad = np.stack([_tensor_rows(pt.space, xi, eta, 1, 0), _tensor_rows(pt.space, xi, eta, 0, 1)], axis=1)
    g = np.linalg.solve(np.transpose(J, (0, 2, 1)), ref_grad)        # (q, 2, n)
    ref = np.einsum("q,qdi,qdj->ij", w * det, g, g)
    assert np.abs(K.toarray() - ref).max() <= tol * np.abs(ref).max()


def test_singular_jacobian_raises():
    space = TensorSplineSpace((uniform_knots(1, 1),) * 2)
    with pytest.raises(AssemblyError):
        assemble_stiffness(space, BoxMap(0.0, 0.0, 0.0, 1.0))


def test_mass_single_span_factor():
    np.testing.assert_allclose(mass_1d(KnotVector([0, 0, 1, 1], 1)).toarray(),
                               [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-15)


@pytest.mark.parametrize("p0,p1,n0,n1", [(1, 1, 1, 1), (2, 3, 4, 2), (3, 2, 8, 8)])
def test_parameter_mass_properties(p0, p1, n0, n1):
    space = TensorSplineSpace((uniform_knots(p0, n0), uniform_knots(p1, n1)))
    M = assemble_parameter_mass(space)
    one = np.ones(space.size)
    assert abs(one @ (M @ one) - 1.0) <= 1e-13
    assert abs(M - M.T).max() <= 1e-15
    np.linalg.cholesky(M.toarray())
    # full 2D quadrature oracle
    xi, eta, w = _gauss_grid(space)
    B = space.basis_matrix(xi, eta).toarray()
    np.testing.assert_allclose(M.toarray(), B.T @ (w[:, None] * B), atol=1e-12)


def test_load_zero_and_unit():
    space = TensorSplineSpace((uniform_knots(2, 4),) * 2)
    assert np.all(assemble_load(space, BoxMap(), 0.0) == 0)
    assert abs(assemble_load(space, BoxMap(), lambda x, y: 1.0 + 0 * x).sum() - 1.0) <= 1e-14


def test_manufactured_solution_is_consistent():
    u, f = annulus_manufactured(1.0, 2.0)
    rng = np.random.default_rng(7)
    r = rng.uniform(1.1, 1.9, 20)
    th = rng.uniform(0.1, 1.4, 20)
    x, y = r * np.cos(th), r * np.sin(th)
    h = 1e-3
    lap = (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4 * u(x, y)) / h ** 2
    np.testing.assert_allclose(-lap, f(x, y), rtol=1e-5, atol=1e-5)
    # homogeneous boundary values
    t = np.linspace(0, 0.5 * math.pi, 9)
    for rad in (1.0, 2.0):
        np.testing.assert_allclose(u(rad * np.cos(t), rad * np.sin(t)), 0, atol=1e-13)
    s = np.linspace(1, 2, 9)
    np.testing.assert_allclose(u(s, 0 * s), 0, atol=1e-13)
    np.testing.assert_allclose(u(0 * s, s), 0, atol=1e-13)


def test_manufactured_load_total_matches_polar_quadrature():
    _, f = annulus_manufactured()
    mp = build_quarter_annulus(8, 4, 2, 2)
    total = sum(assemble_load(p.space, p.geo, f).sum() for p in mp.patches)
    g, w = np.polynomial.legendre.leggauss(40)
    r = 1.5 + 0.5 * g
    th = 0.25 * math.pi * (1 + g)
    R, T = np.meshgrid(r, th)
    ref = np.sum(np.outer(w * 0.25 * math.pi, w * 0.5) * f(R * np.cos(T), R * np.sin(T)) * R)
    assert abs(total - ref) <= 1e-8 * max(1.0, abs(ref))


def test_eliminate_dirichlet_examples():
    space = TensorSplineSpace((uniform_knots(1, 2), uniform_knots(1, 1)))
    K = np.kron(np.eye(2), K1_TWO_SPANS)          # two decoupled 1D copies
    f = np.arange(6.0)
    sys = eliminate_dirichlet(K, f, [0, 2, 3, 4, 5])
    np.testing.assert_allclose(sys.K.toarray(), [[4.0]])
    np.testing.assert_array_equal(sys.active, [1])
    np.testing.assert_array_equal(sys.scatter([7.0]), [0, 7, 0, 0, 0, 0])
    none = eliminate_dirichlet(K, f, [])
    np.testing.assert_array_equal(none.active, np.arange(6))
    np.testing.assert_allclose(none.K.toarray(), K)
    allgone = eliminate_dirichlet(K, f, np.arange(space.size))
    assert allgone.K.shape == (0, 0) and allgone.f.size == 0


def _single_patch_error(p, L):
    mp = build_box_grid(1, 1, p, L)
    pt = mp.patches[0]

    def exact(x, y):
        return np.sin(math.pi * x) * np.sin(math.pi * y)

    K = assemble_stiffness(pt.space, pt.geo)
    f = assemble_load(pt.space, pt.geo, lambda x, y: 2 * math.pi ** 2 * exact(x, y))
    sys = eliminate_dirichlet(K, f, mp.dirichlet_dofs(0))
    u = sys.scatter(scipy.sparse.linalg.spsolve(sys.K.tocsc(), sys.f))
    return math.sqrt(l2_error_sq(pt.space, pt.geo, u, exact))


@pytest.mark.parametrize("p", [1, 2, 3])
def test_single_patch_l2_rate(p):
    errs = [_single_patch_error(p, L) for L in (2, 3, 4, 5)]
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates[-3:]) >= p + 0.7, rates
