"""Command line driver for variant sweeps and convergence studies.

    ietidp solve --config cfg.json
    ietidp solve --variant dd,mgd --patches 8 4 --degree 2 --levels 2..5 --out results.csv
    ietidp converge --config cfg.json

The number of worker threads used for per-patch work is read from the
``IETIDP_THREADS`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .assembly import l2_error_sq
from .geometry import build_quarter_annulus
from .ieti import StageError, VariantConfig, setup, solve
from .problems import annulus_manufactured, constant_rhs

log = logging.getLogger("ietidp")

VARIANT_NAMES = ("dd", "mgd", "mgmg", "mgmgs")
TOL_KEYS = ("tol_outer", "tol_basis", "tol_neumann", "tol_dirichlet")


@dataclass
class ExperimentConfig:
    ntheta: int = 8
    nr: int = 4
    degree: int = 2
    levels: list = field(default_factory=lambda: [2, 3, 4, 5])
    variants: list = field(default_factory=lambda: list(VARIANT_NAMES))
    tolerances: dict = field(default_factory=dict)
    rhs: str = "manufactured"
    r0: float = 1.0
    r1: float = 2.0
    out_csv: str | None = None
    out_json: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.levels = [int(l) for l in self.levels]
        self.variants = [v.lower().replace("-", "") for v in self.variants]
        if not self.levels or any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be non-empty and increasing")
        bad = [v for v in self.variants if v not in VARIANT_NAMES]
        if bad or not self.variants:
            raise ValueError("unknown variants %s" % bad)
        unknown = set(self.tolerances) - set(TOL_KEYS)
        if unknown:
            raise ValueError("unknown tolerance keys %s" % sorted(unknown))
        if self.rhs not in ("manufactured", "constant"):
            raise ValueError("rhs must be 'manufactured' or 'constant'")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError("unknown config keys %s" % sorted(unknown))
        return cls(**data)

    def problem(self):
        """``(exact or None, f)``."""
        if self.rhs == "constant":
            return None, constant_rhs(1.0)
        return annulus_manufactured(self.r0, self.r1)

    def multipatch(self, level: int):
        return build_quarter_annulus(self.ntheta, self.nr, self.degree, level, self.r0, self.r1)

    def variant_config(self, name: str) -> VariantConfig:
        return VariantConfig(name.upper(), seed=self.seed, **self.tolerances)


@dataclass
class RunRecord:
    variant: str
    level: int
    dofs: int
    outer_it: int
    inner_it_gtilde: float
    inner_it_basis: float
    inner_it_dual: float
    t_assembly_s: float
    t_setup_s: float
    t_solve_s: float
    residual: float
    flag: str = "converged"

    @property
    def converged(self) -> bool:
        return self.flag == "converged"

    @classmethod
    def from_row(cls, row: dict) -> "RunRecord":
        kw = {}
        for f in dataclasses.fields(cls):
            typ = {"int": int, "float": float}.get(f.type, str)
            kw[f.name] = typ(row[f.name])
        return cls(**kw)


FIELDS = [f.name for f in dataclasses.fields(RunRecord)]


def run_one(cfg: ExperimentConfig, level: int, variant: str) -> RunRecord:
    mp = cfg.multipatch(level)
    _, f = cfg.problem()
    vc = cfg.variant_config(variant)
    t0 = time.perf_counter()
    prepared = setup(mp, f, vc.alpha)
    t_asm = time.perf_counter() - t0
    dofs = prepared.part.nglobal
    try:
        _, rep, st = solve(vc, mp, f, prepared)
    except StageError as exc:
        log.warning("level %d %s failed in stage %s", level, variant, exc.stage)
        return RunRecord(variant, level, dofs, -1, 0.0, 0.0, 0.0, t_asm, 0.0, 0.0,
                         math.nan, "failed:" + exc.stage)
    return RunRecord(variant, level, dofs, rep.iterations, st.avg_gtilde, st.avg_basis,
                     st.avg_dual, t_asm, st.times.get("setup", 0.0), st.times.get("solve", 0.0),
                     rep.residual, rep.flag)


def write_records(records, csv_path=None, json_path=None) -> None:
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=FIELDS)
            w.writeheader()
            for r in records:
                w.writerow(dataclasses.asdict(r))
    if json_path:
        Path(json_path).write_text(json.dumps([dataclasses.asdict(r) for r in records], indent=2))


def read_records(csv_path) -> list:
    with open(csv_path, newline="") as fh:
        return [RunRecord.from_row(row) for row in csv.DictReader(fh)]


def run_experiment(cfg: ExperimentConfig) -> list:
    """Every (level, variant) pair of the configuration; failures are
    recorded with their flag and the sweep continues."""
    records = []
    for level in cfg.levels:
        for v in cfg.variants:
            rec = run_one(cfg, level, v)
            log.info("%s L=%d dofs=%d it=%d %s", v, level, rec.dofs, rec.outer_it, rec.flag)
            records.append(rec)
    write_records(records, cfg.out_csv, cfg.out_json)
    return records


@dataclass
class ConvergenceRow:
    level: int
    h: float
    l2_error: float
    rate: float


def run_convergence(cfg: ExperimentConfig) -> list:
    """L2 errors of the D-D solution against the manufactured solution and
    the observed rates ``log2(e_{l-1} / e_l)``."""
    exact, f = cfg.problem()
    if exact is None:
        raise ValueError("convergence study needs the manufactured right-hand side")
    rows = []
    for level in cfg.levels:
        mp = cfg.multipatch(level)
        u, rep, _ = solve(cfg.variant_config("dd"), mp, f)
        err = math.sqrt(sum(l2_error_sq(p.space, p.geo, uk, exact) for p, uk in zip(mp.patches, u)))
        h = 1.0 / mp.patches[0].space.kvs[0].numspans
        rate = math.log2(rows[-1].l2_error / err) if rows else math.nan
        rows.append(ConvergenceRow(level, h, err, rate))
    if cfg.out_csv:
        with open(cfg.out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "h", "l2_error", "rate"])
            for r in rows:
                w.writerow([r.level, r.h, r.l2_error, r.rate])
    return rows


def parse_levels(text: str) -> list:
    """``"2..5"``, ``"2,3,4"`` or ``"3"``."""
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",") if t]


def _table(records) -> str:
    head = "%-6s %5s %8s %5s %7s %7s %7s %9s" % ("var", "level", "dofs", "it", "gtilde", "basis",
                                                  "dual", "total_s")
    lines = [head]
    for r in records:
        lines.append("%-6s %5d %8d %5d %7.1f %7.1f %7.1f %9.2f  %s" % (
            r.variant, r.level, r.dofs, r.outer_it, r.inner_it_gtilde, r.inner_it_basis,
            r.inner_it_dual, r.t_assembly_s + r.t_setup_s + r.t_solve_s, r.flag))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ietidp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run a variant sweep")
    s.add_argument("--config", type=Path)
    s.add_argument("--variant", default="dd", help="comma separated list or 'all'")
    s.add_argument("--patches", nargs=2, type=int, metavar=("NTHETA", "NR"), default=[8, 4])
    s.add_argument("--degree", type=int, default=2)
    s.add_argument("--levels", default="2..5")
    s.add_argument("--tol", type=float, default=None, help="outer tolerance")
    s.add_argument("--rhs", choices=["manufactured", "constant"], default="manufactured")
    s.add_argument("--out", type=Path, default=None, help="CSV output")
    s.add_argument("--json", type=Path, default=None, help="JSON output")
    c = sub.add_parser("converge", help="L2 convergence study with the D-D variant")
    c.add_argument("--config", type=Path, required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "converge":
            cfg = ExperimentConfig.from_json(args.config)
            rows = run_convergence(cfg)
            print("%5s %10s %12s %6s" % ("level", "h", "l2_error", "rate"))
            for r in rows:
                print("%5d %10.5f %12.4e %6.2f" % (r.level, r.h, r.l2_error, r.rate))
            return 0
        if args.config:
            cfg = ExperimentConfig.from_json(args.config)
            if args.out:
                cfg.out_csv = str(args.out)
            if args.json:
                cfg.out_json = str(args.json)
        else:
            variants = list(VARIANT_NAMES) if args.variant == "all" else args.variant.split(",")
            tols = {} if args.tol is None else {"tol_outer": args.tol}
            cfg = ExperimentConfig(args.patches[0], args.patches[1], args.degree,
                                   parse_levels(args.levels), variants, tols, args.rhs,
                                   out_csv=str(args.out) if args.out else None,
                                   out_json=str(args.json) if args.json else None)
    except (ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    records = run_experiment(cfg)
    print(_table(records))
    return 0 if all(r.converged for r in records) else 1


if __name__ == "__main__":
    raise SystemExit(main())
