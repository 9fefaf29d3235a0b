"""Univariate and tensor-product B-spline spaces.

Only open (clamped) knot vectors on [0, 1] are supported. Flat dof numbering
of tensor spaces is lexicographic with the first parameter direction running
fastest, i.e. ``flat = i0 + M0 * i1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse


class KnotVectorError(ValueError):
    """Raised for malformed or incompatible knot vectors."""


@dataclass(frozen=True, eq=False)
class KnotVector:
    """An open knot vector on [0, 1] together with a spline degree.

    Args:
        knots: non-decreasing knot sequence; the first and last knot are
            repeated ``p + 1`` times.
        p: spline degree (``p >= 1``).
    """

    knots: np.ndarray
    p: int

    def __post_init__(self):
        kv = np.asarray(self.knots, dtype=float)
        kv.setflags(write=False)
        object.__setattr__(self, "knots", kv)
        p = self.p
        if p < 1:
            raise KnotVectorError("degree must be at least 1")
        if kv.ndim != 1 or kv.size < 2 * (p + 1):
            raise KnotVectorError("knot vector too short for degree %d" % p)
        if np.any(np.diff(kv) < 0):
            raise KnotVectorError("knots must be non-decreasing")
        if np.any(kv[: p + 1] != 0.0) or np.any(kv[-p - 1:] != 1.0):
            raise KnotVectorError("knot vector must be open on [0, 1]")
        inner = kv[p + 1: -p - 1]
        if inner.size:
            if inner[0] <= 0.0 or inner[-1] >= 1.0:
                raise KnotVectorError("end knots must have multiplicity p+1")
            _, mult = np.unique(inner, return_counts=True)
            if mult.max() > p:
                raise KnotVectorError("interior knot multiplicity exceeds degree")

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return (self.p == other.p and self.knots.size == other.knots.size
                and np.allclose(self.knots, other.knots, rtol=0, atol=1e-14))

    def __hash__(self):
        return hash((self.p, self.knots.tobytes()))

    def __repr__(self):
        return "KnotVector(%s, p=%d)" % (np.array2string(self.knots, precision=4), self.p)

    @property
    def numdofs(self) -> int:
        return self.knots.size - self.p - 1

    @property
    def mesh(self) -> np.ndarray:
        """Unique knots, i.e. the breakpoints of the spline space."""
        return np.unique(self.knots)

    @property
    def numspans(self) -> int:
        return self.mesh.size - 1

    def findspan(self, x):
        """Knot index ``i`` with ``knots[i] <= x < knots[i+1]``; ``x = 1``
        belongs to the last nonempty span."""
        x = np.asarray(x, dtype=float)
        kv, p = self.knots, self.p
        span = np.searchsorted(kv, x, side="right") - 1
        return np.clip(span, p, kv.size - p - 2)

    def greville(self) -> np.ndarray:
        kv, p = self.knots, self.p
        return np.array([kv[i + 1: i + p + 1].mean() for i in range(self.numdofs)])


def uniform_knots(p: int, n: int) -> KnotVector:
    """Open uniform knot vector of degree ``p`` with ``n`` spans on [0, 1]."""
    inner = np.linspace(0.0, 1.0, n + 1)[1:-1]
    return KnotVector(np.concatenate([np.zeros(p + 1), inner, np.ones(p + 1)]), p)


def _basis_derivs(kv: KnotVector, x: np.ndarray, nderiv: int):
    # vectorized Cox-de Boor with derivatives over a batch of points
    p, t = kv.p, kv.knots
    npts = x.size
    span = kv.findspan(x)
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    ndu = np.zeros((p + 1, p + 1, npts))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - t[span + 1 - j]
        right[j] = t[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nderiv + 1, p + 1, npts))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1, npts))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nderiv + 1):
            d = np.zeros(npts)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nderiv + 1):
        ders[k] *= fac
        fac *= p - k
    return span - p, np.moveaxis(ders, 2, 0)


def eval_basis_batch(kv: KnotVector, x, nderiv: int = 0):
    """Evaluate the nonzero basis functions and derivatives at many points.

    Returns:
        first: ``(n,)`` index of the first active basis function per point.
        table: ``(n, nderiv+1, p+1)`` values; ``table[:, k]`` holds the k-th
        derivatives of the ``p+1`` active functions.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("evaluation point outside [0, 1]")
    if nderiv > kv.p:
        raise ValueError("nderiv must not exceed the degree")
    return _basis_derivs(kv, x, nderiv)


def eval_basis(kv: KnotVector, x: float, nderiv: int = 0):
    """Nonzero basis functions (and derivatives) at a single point ``x``.

    Returns ``(first_active, table)`` where ``table`` has shape
    ``(nderiv+1, p+1)``.
    """
    first, table = eval_basis_batch(kv, [x], nderiv)
    return int(first[0]), table[0]


def collocation_matrix(kv: KnotVector, x, nderiv: int = 0) -> scipy.sparse.csr_matrix:
    """Sparse matrix of the ``nderiv``-th derivatives of all basis functions
    (columns) at the points ``x`` (rows)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    first, table = eval_basis_batch(kv, x, nderiv)
    p = kv.p
    rows = np.repeat(np.arange(x.size), p + 1)
    cols = (first[:, None] + np.arange(p + 1)).ravel()
    vals = table[:, nderiv, :].ravel()
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(x.size, kv.numdofs))


def partition_of_unity_check(kv: KnotVector, samples, nderiv: int = 0) -> float:
    """Max deviation of the summed basis (or its derivative) from 1 (or 0)."""
    _, table = eval_basis_batch(kv, samples, nderiv)
    target = 1.0 if nderiv == 0 else 0.0
    return float(np.abs(table[:, nderiv, :].sum(axis=1) - target).max())


def dyadic_refine(kv: KnotVector) -> KnotVector:
    """Insert the midpoint of every nonempty knot span once."""
    mesh = kv.mesh
    mids = 0.5 * (mesh[:-1] + mesh[1:])
    return KnotVector(np.sort(np.concatenate([kv.knots, mids])), kv.p)


def dyadic_coarsen(kv: KnotVector) -> KnotVector:
    """Inverse of :func:`dyadic_refine`; raises if ``kv`` is not a dyadic
    refinement of a coarser knot vector."""
    mesh = kv.mesh
    if (mesh.size - 1) % 2:
        raise KnotVectorError("odd number of spans; cannot coarsen")
    drop = mesh[1:-1:2]
    knots = kv.knots[~np.isin(kv.knots, drop)]
    coarse = KnotVector(knots, kv.p)
    if dyadic_refine(coarse) != kv:
        raise KnotVectorError("knot vector is not a dyadic refinement")
    return coarse


def _knot_difference(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    vals_c, cnt_c = np.unique(coarse.knots, return_counts=True)
    vals_f, cnt_f = np.unique(fine.knots, return_counts=True)
    mult_f = dict(zip(vals_f.tolist(), cnt_f.tolist()))
    new = []
    for v, c in zip(vals_c.tolist(), cnt_c.tolist()):
        if mult_f.get(v, 0) < c:
            raise KnotVectorError("fine knot vector does not contain the coarse knots")
    mult_c = dict(zip(vals_c.tolist(), cnt_c.tolist()))
    for v, c in zip(vals_f.tolist(), cnt_f.tolist()):
        new.extend([v] * (c - mult_c.get(v, 0)))
    return np.array(new)


def prolongation_1d(coarse: KnotVector, fine: KnotVector) -> scipy.sparse.csr_matrix:
    """Knot-insertion matrix ``P`` with ``fine_coeffs = P @ coarse_coeffs``.

    Built by repeated single-knot (Boehm) insertion.
    """
    if coarse.p != fine.p:
        raise KnotVectorError("degree mismatch between coarse and fine spaces")
    p = coarse.p
    P = np.eye(coarse.numdofs)
    t = coarse.knots.copy()
    for xbar in _knot_difference(coarse, fine):
        k = int(np.searchsorted(t, xbar, side="right") - 1)
        m = t.size - p - 1
        Q = np.zeros((m + 1, m))
        for i in range(m + 1):
            if i <= k - p:
                alpha = 1.0
            elif i >= k + 1:
                alpha = 0.0
            else:
                alpha = (xbar - t[i]) / (t[i + p] - t[i])
            if i < m:
                Q[i, i] += alpha
            if i >= 1:
                Q[i, i - 1] += 1.0 - alpha
        P = Q @ P
        t = np.insert(t, k + 1, xbar)
    P[np.abs(P) < 1e-15] = 0.0
    return scipy.sparse.csr_matrix(P)


@dataclass(frozen=True)
class TensorSplineSpace:
    """Tensor product of two univariate spline spaces.

    ``kvs[0]`` is the first parameter direction (fastest in the flat numbering).
    """

    kvs: tuple
    _dims: tuple = field(init=False, repr=False)

    def __post_init__(self):
        kvs = tuple(self.kvs)
        if len(kvs) != 2:
            raise ValueError("only bivariate spaces are supported")
        object.__setattr__(self, "kvs", kvs)
        object.__setattr__(self, "_dims", tuple(kv.numdofs for kv in kvs))

    @property
    def dims(self) -> tuple:
        return self._dims

    @property
    def size(self) -> int:
        return self._dims[0] * self._dims[1]

    @property
    def degree(self) -> tuple:
        return tuple(kv.p for kv in self.kvs)

    def flat_index(self, i0, i1):
        return np.asarray(i0) + self._dims[0] * np.asarray(i1)

    def multi_index(self, flat):
        flat = np.asarray(flat)
        return flat % self._dims[0], flat // self._dims[0]

    def side_dofs(self, side) -> np.ndarray:
        """Flat indices of the dofs on ``side = (direction, end)``, ordered
        increasingly along the other direction."""
        d, end = side
        M0, M1 = self._dims
        if d == 0:
            i0 = 0 if end == 0 else M0 - 1
            return self.flat_index(i0, np.arange(M1))
        i1 = 0 if end == 0 else M1 - 1
        return self.flat_index(np.arange(M0), i1)

    def corner_dof(self, corner) -> int:
        c0, c1 = corner
        M0, M1 = self._dims
        return int(self.flat_index(0 if c0 == 0 else M0 - 1, 0 if c1 == 0 else M1 - 1))

    def refine(self) -> "TensorSplineSpace":
        return TensorSplineSpace(tuple(dyadic_refine(kv) for kv in self.kvs))

    def coarsen(self) -> "TensorSplineSpace":
        return TensorSplineSpace(tuple(dyadic_coarsen(kv) for kv in self.kvs))

    def eval_functions(self, coeffs, xi, eta) -> np.ndarray:
        """Evaluate the spline with coefficient vector ``coeffs`` at points."""
        return self.basis_matrix(xi, eta) @ np.asarray(coeffs)

    def basis_matrix(self, xi, eta) -> scipy.sparse.csr_matrix:
        """Values of all tensor basis functions (columns) at paired points
        ``(xi[r], eta[r])`` (rows)."""
        B0 = collocation_matrix(self.kvs[0], xi).toarray()
        B1 = collocation_matrix(self.kvs[1], eta).toarray()
        n = B0.shape[0]
        # row r is kron(B1[r], B0[r]), matching flat = i0 + M0*i1
        return scipy.sparse.csr_matrix((B1[:, :, None] * B0[:, None, :]).reshape(n, -1))


def tensor_prolongation(space_c: TensorSplineSpace, space_f: TensorSplineSpace) -> scipy.sparse.csr_matrix:
    """Prolongation between nested tensor spaces, ``kron(P_1, P_0)`` in the
    flat numbering where direction 0 runs fastest."""
    if len(space_c.kvs) != len(space_f.kvs):
        raise ValueError("dimension mismatch")
    P0 = prolongation_1d(space_c.kvs[0], space_f.kvs[0])
    P1 = prolongation_1d(space_c.kvs[1], space_f.kvs[1])
    return scipy.sparse.kron(P1, P0, format="csr")
