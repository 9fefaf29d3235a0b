"""The four solver variants and a monolithic reference solver."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ..assembly import assemble_load, assemble_stiffness
from ..geometry import MultiPatch
from ..linalg import CONVERGED, SolveReport, bpcg, pcg
from .local import build_local_problems
from .operators import IetiOperator, Modes, compute_primal_basis
from .partition import (DofPartition, build_constraints, build_jump_operators, build_partition,
                        continuity_residual)
from .saddle import build_saddle_system, calibrated_saddle_preconditioner

VARIANTS = ("DD", "MGD", "MGMG", "MGMGS")


class StageError(RuntimeError):
    """An inner or outer solver failed; ``stage`` names the phase."""

    def __init__(self, stage: str, message: str):
        super().__init__("%s: %s" % (stage, message))
        self.stage = stage


@dataclass(frozen=True)
class VariantConfig:
    variant: str = "DD"
    tol_outer: float = 1e-6
    tol_basis: float = 1e-12
    tol_neumann: float = 1e-10
    tol_dirichlet: float = 1e-10
    cycles_dirichlet: int = 2
    cycles_saddle: int = 3
    cycles_sz: int = 1
    alpha: float = 1e-2
    maxit: int = 500
    embed_msd: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", self.variant.upper().replace("-", ""))
        if self.variant not in VARIANTS:
            raise ValueError("unknown variant %r" % self.variant)
        for t in (self.tol_outer, self.tol_basis, self.tol_neumann, self.tol_dirichlet):
            if not 0.0 < t < 1.0:
                raise ValueError("tolerances must lie in (0, 1)")
        if min(self.cycles_dirichlet, self.cycles_saddle, self.cycles_sz) < 1:
            raise ValueError("cycle counts must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    def modes(self) -> Modes:
        v = self.variant
        return Modes(gtilde="direct" if v == "DD" else "pcg",
                     msd="direct" if v == "DD" else self.cycles_dirichlet,
                     dual="mg" if v == "MGMG" else "direct",
                     tol_dirichlet=self.tol_dirichlet, tol_dual=self.tol_neumann,
                     embed_msd=self.embed_msd)

    @property
    def basis_mode(self) -> str:
        return "sz_pcg" if self.variant in ("MGMG", "MGMGS") else "direct"

    @property
    def interior_mode(self) -> str:
        return "direct" if self.variant == "DD" else "pcg"


@dataclass
class StageStats:
    gtilde: list = field(default_factory=list)
    basis: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    times: dict = field(default_factory=dict)
    continuity: float = 0.0

    @staticmethod
    def _avg(x):
        return float(np.mean(x)) if len(x) else 0.0

    @property
    def avg_gtilde(self) -> float:
        return self._avg(self.gtilde)

    @property
    def avg_basis(self) -> float:
        return self._avg(self.basis)

    @property
    def avg_dual(self) -> float:
        return self._avg(self.dual)


@dataclass
class IetiSetup:
    mp: MultiPatch
    part: DofPartition
    cons: object
    jumps: object
    locals: list


def setup(mp: MultiPatch, f, alpha: float = 1e-2) -> IetiSetup:
    part = build_partition(mp)
    cons = build_constraints(mp, part)
    jumps = build_jump_operators(part)
    return IetiSetup(mp, part, cons, jumps, build_local_problems(mp, part, cons, f, alpha))


def _full(setup_: IetiSetup, u_active) -> list:
    out = []
    for k, u in enumerate(u_active):
        full = np.zeros(setup_.mp.patches[k].space.size)
        full[setup_.part.patches[k].active] = u
        out.append(full)
    return out


def solve(variant, mp: MultiPatch, f, prepared: IetiSetup | None = None):
    """Solve the Poisson problem ``-lap u = f`` with homogeneous Dirichlet
    data on ``mp`` by the requested variant.

    Returns ``(u, report, stats)`` where ``u`` holds full coefficient vectors
    per patch and ``report`` describes the outer iteration.
    """
    cfg = variant if isinstance(variant, VariantConfig) else VariantConfig(variant)
    stats = StageStats()
    t0 = time.perf_counter()
    S = prepared or setup(mp, f, cfg.alpha)
    stats.times["assembly"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    try:
        basis = compute_primal_basis(S.locals, S.part, cfg.basis_mode, cfg.tol_basis, cfg.cycles_sz,
                                     cfg.seed)
    except RuntimeError as exc:
        raise StageError("basis", str(exc)) from exc
    stats.basis = basis.iterations
    op = IetiOperator(S.locals, S.part, S.cons, S.jumps, basis, cfg.modes())

    if cfg.variant == "MGMGS":
        sys = build_saddle_system(S.locals, S.part, S.cons, S.jumps.B)
        Kinv, _ = calibrated_saddle_preconditioner(sys, S.locals, S.part, basis, cfg.cycles_saddle,
                                                   seed=cfg.seed)
        stats.times["setup"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        try:
            (x, _), report = bpcg(sys.K, sys.B, Kinv, op.msd_operator(), sys.f,
                                  tol=cfg.tol_outer, maxit=cfg.maxit)
        except RuntimeError as exc:
            raise StageError("outer", str(exc)) from exc
        u_active = sys.to_patches(x)
    else:
        try:
            g, its = op.g_tilde()
        except RuntimeError as exc:
            raise StageError("gtilde", str(exc)) from exc
        stats.gtilde = its
        d = op.rhs(g)
        stats.times["setup"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        op.dual_iterations = []
        if op.nlambda:
            lam, report = pcg(op.F_operator(), d, op.msd_operator(), tol=cfg.tol_outer, maxit=cfg.maxit)
        else:
            lam, report = np.zeros(0), SolveReport(0, 0.0, CONVERGED, [0.0])
        stats.dual = list(op.dual_iterations)
        u_active = op.recover(g, lam, cfg.interior_mode)
    stats.times["solve"] = time.perf_counter() - t0
    u = _full(S, u_active)
    stats.continuity = continuity_residual(u, mp, S.part)
    return u, report, stats


def global_numbering(mp: MultiPatch, part: DofPartition | None = None):
    """Continuous global index of every active dof, per patch."""
    part = part or build_partition(mp)
    return part.global_index, part.nglobal


def solve_monolithic(mp: MultiPatch, f):
    """Assemble the continuous global system and solve it by sparse LU.

    Returns full coefficient vectors per patch.
    """
    part = build_partition(mp)
    n = part.nglobal
    K = scipy.sparse.csr_matrix((n, n))
    rhs = np.zeros(n)
    for k, patch in enumerate(mp.patches):
        act = part.patches[k].active
        gi = part.global_index[k]
        Kk = assemble_stiffness(patch.space, patch.geo)[act][:, act].tocoo()
        K = K + scipy.sparse.csr_matrix((Kk.data, (gi[Kk.row], gi[Kk.col])), shape=(n, n))
        np.add.at(rhs, gi, assemble_load(patch.space, patch.geo, f)[act])
    x = scipy.sparse.linalg.spsolve(K.tocsc(), rhs) if n else np.zeros(0)
    out = []
    for k, patch in enumerate(mp.patches):
        full = np.zeros(patch.space.size)
        full[part.patches[k].active] = x[part.global_index[k]]
        out.append(full)
    return out
