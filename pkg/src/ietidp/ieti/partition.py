"""Interior/interface dof splitting, jump operators and primal constraints.

Patch dofs come in three numberings: *full* (flat index in the patch spline
space), *active* (after removal of Dirichlet dofs) and *trace* (position in
the patch's interface block ``B^(k)``). The torn interface space ``W`` is the
concatenation of all patch traces.

Primal constraints are vertex values at interior vertices and edge averages
on every interface. Each edge gets one *designated* trace dof whose value is
implied by the average and the remaining dofs; Lagrange multipliers are
attached to the remaining (dual) dofs only, which keeps the multiplier set
non-redundant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from ..geometry import MultiPatch, match_interface_dofs


class DecompositionError(ValueError):
    pass


class ConstraintError(ValueError):
    pass


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, a):
        self.parent.setdefault(a, a)
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


@dataclass
class PatchDofs:
    active: np.ndarray      # full indices of active dofs
    interior: np.ndarray    # active indices of I^(k)
    trace: np.ndarray       # active indices of B^(k), trace order
    trace_full: np.ndarray  # full indices of B^(k)
    floating: bool

    @property
    def ntrace(self) -> int:
        return self.trace.size


@dataclass
class PrimalObject:
    kind: str               # "vertex" or "edge"
    index: int              # global primal index
    patches: tuple
    gids: tuple             # global interface dofs involved


@dataclass
class DofPartition:
    patches: list
    offsets: np.ndarray     # W offsets, len npatches + 1
    gid: np.ndarray         # global interface dof of every W entry
    copies: list            # gid -> W indices, ordered by patch
    primal: list            # PrimalObject per global primal index
    primal_map: list        # per patch: global primal indices of local rows
    vertex_gids: set
    edge_of_gid: dict       # gid -> global primal index of its edge
    designated: dict        # edge primal index -> designated gid
    global_index: list      # per patch: continuous global dof of each active dof
    nglobal: int

    @property
    def npatches(self) -> int:
        return len(self.patches)

    @property
    def nW(self) -> int:
        return int(self.offsets[-1])

    @property
    def nprimal(self) -> int:
        return len(self.primal)

    def W_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def split(self, w) -> list:
        return [w[self.W_slice(k)] for k in range(self.npatches)]

    def multiplicity(self, gid: int) -> int:
        return len(self.copies[gid])


def build_partition(mp: MultiPatch) -> DofPartition:
    """Split every patch into interior and interface dofs and number the
    interface dofs, the continuous global dofs and the primal objects."""
    N = mp.npatches
    uf = _UnionFind()
    for k in range(N):
        for j in range(mp.patches[k].space.size):
            uf.find((k, j))
    for itf in mp.interfaces:
        for a, b in match_interface_dofs(mp, itf.k, itf.l):
            uf.union((itf.k, a), (itf.l, b))

    dirichlet_roots = set()
    for k in range(N):
        for j in mp.dirichlet_dofs(k):
            dirichlet_roots.add(uf.find((k, int(j))))

    # continuous global numbering of non-Dirichlet dofs
    roots = {}
    patches = []
    global_index = []
    for k in range(N):
        space = mp.patches[k].space
        if not mp.interface_sides(k) and not mp.dirichlet_sides(k) and N > 1:
            raise DecompositionError("patch %d has neither interface nor Dirichlet boundary" % k)
        ddofs = set(mp.dirichlet_dofs(k).tolist())
        active = np.array([j for j in range(space.size)
                           if j not in ddofs and uf.find((k, j)) not in dirichlet_roots], dtype=int)
        gi = []
        for j in active:
            r = uf.find((k, int(j)))
            if r not in roots:
                roots[r] = len(roots)
            gi.append(roots[r])
        global_index.append(np.array(gi, dtype=int))
        on_itf = set()
        for s in mp.interface_sides(k):
            on_itf.update(space.side_dofs(s).tolist())
        pos = {int(j): i for i, j in enumerate(active)}
        # trace ordering: increasing full index
        trace_full = np.array(sorted(j for j in on_itf if j in pos), dtype=int)
        trace = np.array([pos[j] for j in trace_full], dtype=int)
        interior = np.setdiff1d(np.arange(active.size), trace)
        patches.append(PatchDofs(active, interior, trace, trace_full,
                                 floating=not mp.dirichlet_sides(k)))

    offsets = np.concatenate([[0], np.cumsum([p.ntrace for p in patches])]).astype(int)
    gid_of_root = {}
    gids = np.empty(offsets[-1], dtype=int)
    for k, pd in enumerate(patches):
        for t, j in enumerate(pd.trace_full):
            r = uf.find((k, int(j)))
            if r not in gid_of_root:
                gid_of_root[r] = len(gid_of_root)
            gids[offsets[k] + t] = gid_of_root[r]
    copies = [[] for _ in range(len(gid_of_root))]
    for w, g in enumerate(gids):
        copies[g].append(w)

    def gid_of(k, full):
        return gid_of_root.get(uf.find((k, int(full))))

    # primal objects: interior vertices first, then interfaces (edges)
    primal, primal_local = [], [[] for _ in range(N)]
    vertex_gids = set()
    for v in mp.vertices:
        if v.on_boundary:
            continue
        ks = tuple(k for k, _ in v.corners)
        k0, c0 = v.corners[0]
        g = gid_of(k0, mp.patches[k0].space.corner_dof(c0))
        if g is None:
            continue
        obj = PrimalObject("vertex", len(primal), ks, (g,))
        primal.append(obj)
        vertex_gids.add(g)
        for k in ks:
            primal_local[k].append(obj.index)
    edge_of_gid, designated = {}, {}
    for itf in mp.interfaces:
        space = mp.patches[itf.k].space
        side_full = space.side_dofs(itf.side_k)
        g_edge = [gid_of(itf.k, j) for j in side_full]
        g_edge = [g for g in g_edge if g is not None]
        if not g_edge:
            continue
        obj = PrimalObject("edge", len(primal), (itf.k, itf.l), tuple(g_edge))
        primal.append(obj)
        inner = [g for g in g_edge if g not in vertex_gids]
        if not inner:
            raise ConstraintError("edge between patches %d and %d has no dof besides its "
                                  "vertices; edge average and vertex constraints are dependent"
                                  % (itf.k, itf.l))
        for g in inner:
            edge_of_gid[g] = obj.index
        designated[obj.index] = inner[len(inner) // 2]
        primal_local[itf.k].append(obj.index)
        primal_local[itf.l].append(obj.index)

    return DofPartition(patches, offsets, gids, copies, primal,
                        [np.array(sorted(pl), dtype=int) for pl in primal_local],
                        vertex_gids, edge_of_gid, designated, global_index, len(roots))


@dataclass
class JumpOperator:
    B: scipy.sparse.csr_matrix      # rows = multipliers, cols = W
    BD: scipy.sparse.csr_matrix     # multiplicity-scaled
    row_gid: np.ndarray             # interface dof of each row

    @property
    def nlambda(self) -> int:
        return self.B.shape[0]


def build_jump_operators(part: DofPartition, full: bool = False) -> JumpOperator:
    """Chain-pattern jump operator: a dof with ``m`` copies gets ``m - 1``
    rows ``copy_i - copy_{i+1}``; ``BD`` carries entries ``+-1/m``.

    By default rows are created for dual dofs only (neither primal vertex nor
    designated edge dof). ``full=True`` tears every interface dof, which is
    used to measure continuity.
    """
    skip = set() if full else part.vertex_gids | set(part.designated.values())
    rows, cols, vals, dvals, rgid = [], [], [], [], []
    r = 0
    for g, cps in enumerate(part.copies):
        if g in skip:
            continue
        m = len(cps)
        for a, b in zip(cps[:-1], cps[1:]):
            rows += [r, r]
            cols += [a, b]
            vals += [1.0, -1.0]
            dvals += [1.0 / m, -1.0 / m]
            rgid.append(g)
            r += 1
    shape = (r, part.nW)
    B = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=shape)
    BD = scipy.sparse.csr_matrix((dvals, (rows, cols)), shape=shape)
    return JumpOperator(B, BD, np.array(rgid, dtype=int))


def trace_weights(mp: MultiPatch, part: DofPartition, k: int, primal_index: int) -> np.ndarray:
    """Integrals of the trace basis functions of an edge object on patch ``k``
    (zero off the edge), restricted to the patch trace."""
    obj = part.primal[primal_index]
    pd = part.patches[k]
    lo = part.offsets[k]
    other = obj.patches[1] if obj.patches[0] == k else obj.patches[0]
    itf = mp.find_interface(k, other)
    space = mp.patches[k].space
    d = itf.side_k[0]
    kv = space.kvs[1 - d]      # tangential knot vector
    gset = set(obj.gids)
    w = np.zeros(pd.ntrace)
    for t in range(pd.ntrace):
        if part.gid[lo + t] not in gset:
            continue
        i = int(space.multi_index(pd.trace_full[t])[1 - d])
        w[t] = (kv.knots[i + kv.p + 1] - kv.knots[i]) / (kv.p + 1)
    return w


@dataclass
class PrimalConstraints:
    C: list          # per patch csr, n_primal_local x ntrace
    weights: list    # per patch dict: primal index -> trace weight vector (edges)

    def full(self, part: DofPartition, k: int) -> scipy.sparse.csr_matrix:
        """``C^(k)`` extended by zero to all active dofs of patch ``k``."""
        pd = part.patches[k]
        n = pd.active.size
        E = scipy.sparse.csr_matrix((np.ones(pd.ntrace), (pd.trace, np.arange(pd.ntrace))),
                                    shape=(n, pd.ntrace))
        return (self.C[k] @ E.T).tocsr()


def build_constraints(mp: MultiPatch, part: DofPartition) -> PrimalConstraints:
    """Vertex-value rows (unit entry at the corner dof) and edge-average rows
    (trace integrals of the edge's active dofs, normalized to reproduce
    constants)."""
    Cs, Ws = [], []
    for k, pd in enumerate(part.patches):
        lo = part.offsets[k]
        rows = []
        wk = {}
        for pi in part.primal_map[k]:
            obj = part.primal[pi]
            row = np.zeros(pd.ntrace)
            if obj.kind == "vertex":
                g = obj.gids[0]
                t = [t for t in range(pd.ntrace) if part.gid[lo + t] == g]
                row[t[0]] = 1.0
            else:
                w = trace_weights(mp, part, k, pi)
                row = w / w.sum()
                wk[pi] = row
            rows.append(row)
        C = np.array(rows).reshape(len(rows), pd.ntrace)
        if C.shape[0] and np.linalg.matrix_rank(C) < C.shape[0]:
            raise ConstraintError("primal constraints of patch %d are linearly dependent" % k)
        Cs.append(scipy.sparse.csr_matrix(C))
        Ws.append(wk)
    return PrimalConstraints(Cs, Ws)


def dual_embedding(part: DofPartition, cons: PrimalConstraints, k: int) -> scipy.sparse.csr_matrix:
    """Map from trace vectors carrying values on dual dofs to trace vectors
    with vanishing primal functionals: vertex entries are zeroed and every
    designated entry is set so that its edge average vanishes."""
    pd = part.patches[k]
    lo = part.offsets[k]
    gids = part.gid[lo:lo + pd.ntrace]
    rows, cols, vals = [], [], []
    des_pos = {}
    for t, g in enumerate(gids):
        if g in part.vertex_gids:
            continue
        e = part.edge_of_gid.get(int(g))
        if e is not None and part.designated[e] == g:
            des_pos[e] = t
            continue
        rows.append(t)
        cols.append(t)
        vals.append(1.0)
    for e, d in des_pos.items():
        w = cons.weights[k][e]
        for t in np.nonzero(w)[0]:
            g = int(gids[t])
            if t == d or g in part.vertex_gids:
                continue
            rows.append(d)
            cols.append(t)
            vals.append(-w[t] / w[d])
    n = pd.ntrace
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def continuity_residual(u_patches, mp: MultiPatch, part: DofPartition) -> float:
    """Max absolute jump between copies of every interface dof, evaluated on
    full patch coefficient vectors."""
    worst = 0.0
    for cps in part.copies:
        vals = []
        for w in cps:
            k = int(np.searchsorted(part.offsets, w, side="right") - 1)
            t = w - part.offsets[k]
            vals.append(u_patches[k][part.patches[k].trace_full[t]])
        if len(vals) > 1:
            worst = max(worst, max(vals) - min(vals))
    return float(worst)
