"""Patch geometry maps and structured multipatch domains.

Sides of the parameter square are addressed as ``(direction, end)``:
``(0, 0)`` is ``xi = 0``, ``(0, 1)`` is ``xi = 1``, ``(1, 0)`` is ``eta = 0``
and ``(1, 1)`` is ``eta = 1``. Corners are ``(c0, c1)`` with ``c_d in {0, 1}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .splines import TensorSplineSpace, uniform_knots

SIDES = ((0, 0), (0, 1), (1, 0), (1, 1))


class GeometryMap:
    """A map ``G: [0,1]^2 -> R^2`` with Jacobian ``J[..., i, j] = dG_i/dxi_j``."""

    def __call__(self, xi, eta) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, xi, eta) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class BoxMap(GeometryMap):
    """Affine map of the unit square onto ``[x0,x1] x [y0,y1]``."""

    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0

    def __call__(self, xi, eta):
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        return np.stack([self.x0 + (self.x1 - self.x0) * xi,
                         self.y0 + (self.y1 - self.y0) * eta], axis=-1)

    def jacobian(self, xi, eta):
        xi, _ = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        J = np.zeros(xi.shape + (2, 2))
        J[..., 0, 0] = self.x1 - self.x0
        J[..., 1, 1] = self.y1 - self.y0
        return J


@dataclass(frozen=True)
class AnnularSectorMap(GeometryMap):
    """Polar box ``[r_lo, r_hi] x [th_lo, th_hi]``; ``xi`` runs radially and
    ``eta`` in angle, which keeps the map orientation preserving."""

    r_lo: float
    r_hi: float
    th_lo: float
    th_hi: float

    def __call__(self, xi, eta):
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        r = self.r_lo + (self.r_hi - self.r_lo) * xi
        th = self.th_lo + (self.th_hi - self.th_lo) * eta
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def jacobian(self, xi, eta):
        xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
        dr = self.r_hi - self.r_lo
        dth = self.th_hi - self.th_lo
        r = self.r_lo + dr * xi
        th = self.th_lo + dth * eta
        c, s = np.cos(th), np.sin(th)
        J = np.empty(xi.shape + (2, 2))
        J[..., 0, 0] = c * dr
        J[..., 0, 1] = -r * s * dth
        J[..., 1, 0] = s * dr
        J[..., 1, 1] = r * c * dth
        return J


@dataclass(frozen=True)
class SplineMap(GeometryMap):
    """Spline geometry ``G(xi) = sum_i P_i N_i(xi)`` with control points
    ``ctrl`` of shape ``(space.size, 2)`` in flat dof order."""

    space: TensorSplineSpace
    ctrl: np.ndarray

    def _tables(self, xi, eta):
        from .splines import collocation_matrix
        xi = np.atleast_1d(np.asarray(xi, float)).ravel()
        eta = np.atleast_1d(np.asarray(eta, float)).ravel()
        kv0, kv1 = self.space.kvs
        return ([collocation_matrix(kv0, xi, k).toarray() for k in (0, 1)],
                [collocation_matrix(kv1, eta, k).toarray() for k in (0, 1)])

    def _contract(self, A0, A1):
        M0, M1 = self.space.dims
        P = np.asarray(self.ctrl).reshape(M1, M0, 2)
        return np.einsum("ni,nj,jid->nd", A0, A1, P)

    def __call__(self, xi, eta):
        shape = np.broadcast(np.asarray(xi), np.asarray(eta)).shape
        xi, eta = (np.broadcast_to(a, shape) for a in (np.asarray(xi, float), np.asarray(eta, float)))
        B0, B1 = self._tables(xi, eta)
        return self._contract(B0[0], B1[0]).reshape(shape + (2,))

    def jacobian(self, xi, eta):
        shape = np.broadcast(np.asarray(xi), np.asarray(eta)).shape
        xi, eta = (np.broadcast_to(a, shape) for a in (np.asarray(xi, float), np.asarray(eta, float)))
        B0, B1 = self._tables(xi, eta)
        d0 = self._contract(B0[1], B1[0])
        d1 = self._contract(B0[0], B1[1])
        return np.stack([d0, d1], axis=-1).reshape(shape + (2, 2))


@dataclass(frozen=True)
class Patch:
    geo: GeometryMap
    space: TensorSplineSpace


@dataclass(frozen=True)
class Interface:
    """Side ``side_k`` of patch ``k`` coincides with side ``side_l`` of patch
    ``l``; ``reversed`` flips the tangential parametrization of ``l``."""

    k: int
    side_k: tuple
    l: int
    side_l: tuple
    reversed: bool = False


@dataclass(frozen=True)
class Vertex:
    """A geometric vertex of the patch layout and the patch corners at it."""

    position: tuple
    corners: tuple  # of (patch, corner)
    on_boundary: bool


@dataclass
class MultiPatch:
    patches: list
    interfaces: list
    vertices: list
    dirichlet: list  # of (patch, side)
    meta: dict = field(default_factory=dict)

    @property
    def npatches(self) -> int:
        return len(self.patches)

    def dirichlet_sides(self, k: int) -> list:
        return [s for (q, s) in self.dirichlet if q == k]

    def interface_sides(self, k: int) -> list:
        out = []
        for itf in self.interfaces:
            if itf.k == k:
                out.append(itf.side_k)
            if itf.l == k:
                out.append(itf.side_l)
        return out

    def find_interface(self, k: int, l: int) -> Interface:
        for itf in self.interfaces:
            if (itf.k, itf.l) == (k, l):
                return itf
            if (itf.k, itf.l) == (l, k):
                return Interface(itf.l, itf.side_l, itf.k, itf.side_k, itf.reversed)
        raise KeyError("patches %d and %d share no interface" % (k, l))

    def dirichlet_dofs(self, k: int) -> np.ndarray:
        space = self.patches[k].space
        sides = self.dirichlet_sides(k)
        if not sides:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate([space.side_dofs(s) for s in sides]))

    def total_dofs(self) -> int:
        return sum(p.space.size for p in self.patches)


def structured_multipatch(maps, spaces, nx: int, ny: int, meta=None) -> MultiPatch:
    """Assemble the topology of an ``nx x ny`` patch grid.

    Patch ``(i, j)`` has index ``k = i + nx * j``; its ``xi`` direction runs
    along the grid's ``i`` axis and ``eta`` along ``j``. All outer sides are
    marked Dirichlet.
    """
    idx = lambda i, j: i + nx * j
    patches = [Patch(maps[idx(i, j)], spaces[idx(i, j)]) for j in range(ny) for i in range(nx)]
    interfaces = []
    for j in range(ny):
        for i in range(nx):
            if i + 1 < nx:
                interfaces.append(Interface(idx(i, j), (0, 1), idx(i + 1, j), (0, 0)))
            if j + 1 < ny:
                interfaces.append(Interface(idx(i, j), (1, 1), idx(i, j + 1), (1, 0)))
    dirichlet = []
    for j in range(ny):
        for i in range(nx):
            k = idx(i, j)
            if i == 0:
                dirichlet.append((k, (0, 0)))
            if i == nx - 1:
                dirichlet.append((k, (0, 1)))
            if j == 0:
                dirichlet.append((k, (1, 0)))
            if j == ny - 1:
                dirichlet.append((k, (1, 1)))
    vertices = []
    for b in range(ny + 1):
        for a in range(nx + 1):
            corners = []
            for (i, c0) in ((a - 1, 1), (a, 0)):
                for (j, c1) in ((b - 1, 1), (b, 0)):
                    if 0 <= i < nx and 0 <= j < ny:
                        corners.append((idx(i, j), (c0, c1)))
            k, c = corners[0]
            pos = tuple(np.asarray(patches[k].geo(float(c[0]), float(c[1]))).tolist())
            on_bd = a in (0, nx) or b in (0, ny)
            vertices.append(Vertex(pos, tuple(corners), on_bd))
    return MultiPatch(patches, interfaces, vertices, dirichlet, dict(meta or {}))


def build_quarter_annulus(ntheta: int, nr: int, p: int, refinements: int,
                          r0: float = 1.0, r1: float = 2.0) -> MultiPatch:
    """Quarter annulus ``r0 <= r <= r1``, ``0 <= theta <= pi/2`` split into an
    ``nr x ntheta`` grid of polar boxes, each discretized with an open uniform
    knot vector of ``2**refinements`` spans per direction."""
    if ntheta < 1 or nr < 1 or p < 1 or refinements < 0:
        raise ValueError("invalid quarter annulus parameters")
    rs = np.linspace(r0, r1, nr + 1)
    ths = np.linspace(0.0, 0.5 * math.pi, ntheta + 1)
    kv = uniform_knots(p, 2 ** refinements)
    maps, spaces = [], []
    for j in range(ntheta):
        for i in range(nr):
            maps.append(AnnularSectorMap(rs[i], rs[i + 1], ths[j], ths[j + 1]))
            spaces.append(TensorSplineSpace((kv, kv)))
    meta = dict(kind="quarter_annulus", ntheta=ntheta, nr=nr, degree=p,
                refinements=refinements, r0=r0, r1=r1)
    return structured_multipatch(maps, spaces, nr, ntheta, meta)


def build_box_grid(nx: int, ny: int, p: int, refinements: int,
                   width: float = 1.0, height: float = 1.0) -> MultiPatch:
    """Rectangle ``[0,width] x [0,height]`` split into ``nx x ny`` boxes."""
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    kv = uniform_knots(p, 2 ** refinements)
    maps, spaces = [], []
    for j in range(ny):
        for i in range(nx):
            maps.append(BoxMap(xs[i], xs[i + 1], ys[j], ys[j + 1]))
            spaces.append(TensorSplineSpace((kv, kv)))
    meta = dict(kind="box", nx=nx, ny=ny, degree=p, refinements=refinements)
    return structured_multipatch(maps, spaces, nx, ny, meta)


def multipatch_from_json(source) -> MultiPatch:
    """Build a domain from a JSON description (a path, a JSON string or a
    dict)::

        {"domain": "quarter_annulus", "patches": [8, 4], "degree": 2,
         "refinement": 3, "radii": [1.0, 2.0]}

    ``patches`` is ``[n_theta, n_r]`` for the annulus and ``[nx, ny]`` for
    ``"box"``.
    """
    if isinstance(source, dict):
        desc = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            desc = json.loads(text)
        else:
            with open(text) as fh:
                desc = json.load(fh)
    kind = desc.get("domain", "quarter_annulus")
    n0, n1 = desc.get("patches", [8, 4])
    p = int(desc.get("degree", 2))
    ref = int(desc.get("refinement", 2))
    if kind == "quarter_annulus":
        r0, r1 = desc.get("radii", [1.0, 2.0])
        return build_quarter_annulus(int(n0), int(n1), p, ref, r0, r1)
    if kind == "box":
        return build_box_grid(int(n0), int(n1), p, ref)
    raise ValueError("unknown domain kind %r" % kind)


def match_interface_dofs(mp: MultiPatch, k: int, l: int) -> list:
    """Pairs ``(dof in k, dof in l)`` of coinciding basis traces on the
    interface shared by patches ``k`` and ``l`` (flat, non-eliminated dofs)."""
    itf = mp.find_interface(k, l)
    sk, sl = mp.patches[k].space, mp.patches[l].space
    tk = sk.kvs[1 - itf.side_k[0]]
    tl = sl.kvs[1 - itf.side_l[0]]
    if tk != tl:
        raise ValueError("non-matching trace spaces on interface (%d, %d)" % (k, l))
    dk = sk.side_dofs(itf.side_k)
    dl = sl.side_dofs(itf.side_l)
    if itf.reversed:
        dl = dl[::-1]
    return list(zip(dk.tolist(), dl.tolist()))


def side_parameters(side, t) -> tuple:
    """Parameter coordinates of points with tangential parameter ``t`` on a side."""
    d, end = side
    t = np.asarray(t, float)
    fixed = np.full_like(t, float(end))
    return (fixed, t) if d == 0 else (t, fixed)
