"""Command-line front end.

Exit codes: 0 success, 1 domain violation or budget, 2 usage or parse error.
Every command writes a ``run_manifest.json`` next to its artifacts that echoes
the resolved parameters and defaults. Outputs carry no timestamps so identical
inputs give byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import disorder_mc, free_green, oracle, windows
from .free_green import EnergyGrid, SpectralPoint
from .model import DEFAULT_DOF_BUDGET, ModelError, ProblemConfig, build_truncated_strip, check_assumptions, load_config
from .susy import identities as susy

log = logging.getLogger("treestrip")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


def _grid(text: str | None) -> EnergyGrid | None:
    if text is None:
        return None
    try:
        return EnergyGrid.parse(text)
    except ValueError as exc:
        raise UsageError(f"bad --grid {text!r}: expected LO:HI:STEP with STEP > 0 ({exc})") from exc


def _ladder(text: str | None, default: tuple[float, float, float]) -> np.ndarray:
    try:
        start, ratio, eta_min = (float(x) for x in text.split(":")) if text else default
        return free_green.eta_ladder(start, ratio, eta_min)
    except ValueError as exc:
        raise UsageError(f"bad --eta-ladder {text!r}: expected START:RATIO:MIN ({exc})") from exc


def _positive(name: str, value, allow_zero: bool = False):
    if value is None:
        return value
    if not (value > 0 or (allow_zero and value == 0)) or not math.isfinite(value):
        raise UsageError(f"--{name} must be {'non-negative' if allow_zero else 'positive'}")
    return value


def _load(path: str | None) -> ProblemConfig:
    if path is None:
        raise UsageError("--model is required")
    try:
        return load_config(path)
    except FileNotFoundError as exc:
        raise UsageError(f"model config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"model config is not valid JSON: {exc}") from exc
    except ModelError as exc:
        raise UsageError(f"invalid model config: {exc}") from exc


def _out_dir(path: str | None) -> Path:
    out = Path(path or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def _manifest(out: Path, command: str, params: dict, cfg: ProblemConfig | None = None, **extra) -> None:
    doc = {"tool": "treestrip", "version": __version__, "command": command, "parameters": params}
    if cfg is not None:
        doc["model"] = cfg.to_dict()
    doc.update(extra)
    _write_json(out / "run_manifest.json", doc)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


# ---------------------------------------------------------------- commands

def cmd_check(args) -> int:
    cfg = _load(args.model)
    report = check_assumptions(cfg.model)
    required = [r.strip().upper() for r in args.require.split(",") if r.strip()]
    unknown = set(required) - {"S1", "S2", "S3", "S3'"}
    if unknown:
        raise UsageError(f"unknown assumption(s) {sorted(unknown)}")
    violated = report.violations(required)
    doc = report.to_dict() | {"required": required, "violated": violated}
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "assumptions.json", doc)
        _manifest(out, "check", {"require": required}, cfg)
    print(json.dumps(doc, sort_keys=True))
    for v in violated:
        print(f"{v} violated", file=sys.stderr)
    return EXIT_DOMAIN if violated else EXIT_OK


def cmd_free_spectrum(args) -> int:
    cfg = _load(args.model)
    grid = _grid(args.grid)
    if grid is None:
        lo, hi = free_green.default_energy_range(cfg.model, cfg.vertical)
        grid = EnergyGrid(lo, hi, 1e-3)
    ladder = _ladder(args.eta_ladder, (1.0, 0.5, free_green.ETA_MIN))
    scan = free_green.compute_I_S(cfg.model, grid, ladder)
    out = _out_dir(args.out)
    s = cfg.model.s
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "eta_final"] + [f"re_gamma_{q + 1}" for q in range(s)] + [f"im_gamma_{q + 1}" for q in range(s)]
               + ["exists", "robust", "in_I_S", "status"])
    for i, E in enumerate(scan.energies):
        g = scan.gamma[i]
        w.writerow([_fmt(E), _fmt(scan.eta_final)] + [_fmt(v) for v in g.real] + [_fmt(v) for v in g.imag]
                   + [int(scan.exists[i]), int(scan.robust[i]), int(scan.in_I_S[i]), scan.status[i]])
    _write_text(out / "gamma_grid.csv", buf.getvalue())
    _write_json(out / "intervals.json", scan.intervals.to_dict())
    _manifest(out, "free-spectrum", {
        "grid": [grid.lo, grid.hi, grid.step], "eta_ladder": ladder.tolist(), "tol_fp": free_green.TOL_FP,
        "tol_bv": free_green.TOL_BV, "bound_cap": free_green.BOUND_CAP, "eps_im": free_green.EPS_IM,
    }, cfg)
    print(json.dumps(scan.intervals.to_dict()))
    return EXIT_OK


def cmd_window(args) -> int:
    cfg = _load(args.model)
    grid = _grid(args.grid)
    if grid is None:
        lo, hi = free_green.default_energy_range(cfg.model, cfg.vertical)
        grid = EnergyGrid(lo, hi, 1e-3)
    ladder = _ladder(args.eta_ladder, (1.0, 0.5, free_green.ETA_MIN))
    report = windows.compute_window(cfg.model, cfg.vertical, grid, ladder)
    out = _out_dir(args.out)
    _write_text(out / "window.csv", report.to_csv())
    _write_json(out / "window.json", report.summary())
    _manifest(out, "window", {
        "grid": [grid.lo, grid.hi, grid.step], "eta_ladder": ladder.tolist(), "det_tol": windows.DET_TOL,
        "low_margin": windows.LOW_MARGIN, "eps_im": free_green.EPS_IM, "hard_cap": windows.HARD_CAP,
        "cert_tol": windows.CERT_TOL,
    }, cfg)
    print(json.dumps(report.summary()["counts"], sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args.model)
    if args.seed is None:
        raise UsageError("--seed is required for simulate")
    ladder = _ladder(args.eta_ladder, (1e-1, 0.5, 1e-4))
    lam = cfg.lam if args.lam is None else args.lam
    ind = disorder_mc.ac_indicator(cfg.model, cfg.vertical, cfg.disorder, lam, args.energy, ladder,
                                   N_pool=args.pool, seed=args.seed, burn_in=args.burn_in,
                                   rung_burn_in=args.rung_burn_in, measure=args.measure, workers=args.workers)
    out = _out_dir(args.out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "eta", "label", "trace_second", "stderr"])
    for k, eta in enumerate(ind.eta_ladder):
        for q in range(cfg.model.s):
            w.writerow([_fmt(ind.E), _fmt(eta), q + 1, _fmt(ind.trace_second_by_eta[k, q]),
                        _fmt(ind.stderr_by_eta[k, q])])
    _write_text(out / "ladder.csv", buf.getvalue())
    _write_json(out / "ac_indicator.json", ind.to_dict())
    free_ref = None
    if lam == 0:
        free_ref = [[[float(v.real), float(v.imag)] for v in row]
                    for A in disorder_mc.free_matrices(cfg.model, cfg.vertical, complex(ind.E, ind.eta_ladder[-1]))
                    for row in A]
    _write_json(out / "moments.json", {"lambda": lam, "free_reference_last_eta": free_ref,
                                       "trace_second_by_eta": ind.trace_second_by_eta.tolist()})
    _manifest(out, "simulate", {
        "energy": args.energy, "lambda": lam, "eta_ladder": ladder.tolist(), "pool": args.pool, "seed": args.seed,
        "burn_in": args.burn_in, "rung_burn_in": args.rung_burn_in, "measure": args.measure,
        "growth_cap": ind.growth_cap, "tail": ind.tail, "block": disorder_mc.BLOCK,
    }, cfg)
    print(json.dumps({"bounded": ind.bounded, "growth_ratio_max": ind.growth_ratio_max, "kind": "indicator"}))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args.model)
    depth = args.depth
    seed = 0 if args.seed is None else args.seed
    lam = cfg.lam if args.lam is None else args.lam
    try:
        strip = build_truncated_strip(cfg.model, cfg.vertical, args.root_label - 1, depth, dof_budget=args.dof_budget)
        H = oracle.assemble(strip, cfg.vertical, lam, cfg.disorder, seed, dof_budget=args.dof_budget)
    except ModelError as exc:
        raise DomainError(str(exc)) from exc
    out = _out_dir(args.out)
    points = [1j, 1 + 0.1j, -2 + 0.01j]
    checks = []
    for z in points:
        a, b = oracle.green_at_root(H, z), oracle.recursion_green(H, z)
        checks.append({"z": [z.real, z.imag], "max_deviation": float(np.max(np.abs(a - b)))})
    worst = max(c["max_deviation"] for c in checks)
    doc = {"depth": depth, "dof": H.dof, "lambda": lam, "seed": seed, "recursion_vs_solve": checks,
           "max_deviation": worst}
    if H.dof <= oracle.DENSE_BUDGET or args.slicing:
        hist = oracle.eigenvalue_histogram(H, args.bins, slicing=args.slicing)
        _write_text(out / "histogram.csv", hist.to_csv())
        doc["histogram_mode"] = hist.mode
    if lam == 0:
        grid = _grid(args.grid) or EnergyGrid(-2.0, 2.0, 0.01)
        table = oracle.dos_vs_green(cfg.model, cfg.vertical, grid, depth, root_label=args.root_label - 1)
        _write_text(out / "dos_comparison.csv", table.to_csv())
        doc["dos_sup_difference"] = table.sup_difference
        doc["dos_method"] = table.method
    _write_json(out / "oracle.json", doc)
    _manifest(out, "oracle", {"depth": depth, "seed": seed, "lambda": lam, "root_label": args.root_label,
                              "bins": args.bins, "slicing": args.slicing, "dof_budget": args.dof_budget,
                              "eta_smooth": oracle.ETA_SMOOTH, "dense_budget": oracle.DENSE_BUDGET,
                              "test_points": [[z.real, z.imag] for z in points]}, cfg)
    print(json.dumps({"max_deviation": worst, "dof": H.dof}))
    return EXIT_OK


def _sizes(text: str) -> list[tuple[int, int]]:
    try:
        out = []
        for part in text.split(","):
            m, n = part.lower().split("x")
            out.append((int(m), int(n)))
        return out
    except ValueError as exc:
        raise UsageError(f"bad --sizes {text!r}: expected e.g. 1x1,2x1,2x2") from exc


def cmd_susy(args) -> int:
    sizes = _sizes(args.sizes)
    try:
        for m, n in sizes:
            susy.check_scope(m, n)
    except susy.ScopeError as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    records = susy.run_suite(sizes, cases=args.cases, seed=0 if args.seed is None else args.seed,
                             mutation=args.mutate)
    ok = all(r.passed for r in records)
    lines = [f"{'identity':<24} {'(m,n)':<7} {'residual':>12} {'threshold':>10}  result"]
    for r in records:
        lines.append(f"{r.identity:<24} ({r.m},{r.n})  {r.residual:12.3e} {r.threshold:10.0e}  {'pass' if r.passed else 'FAIL'}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "susy_report.json", {"passed": ok, "records": [r.to_dict() for r in records]})
        _write_text(out / "susy_report.txt", text + "\n")
        _manifest(out, "susy-verify", {"sizes": sizes, "cases": args.cases, "seed": args.seed,
                                       "mutation": args.mutate, "thresholds": susy.THRESHOLDS,
                                       "generator_cap": susy.GENERATOR_CAP})
    if not ok:
        print("identity suite FAILED", file=sys.stderr)
    return EXIT_OK if ok else EXIT_DOMAIN


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treestrip", description="Spectral tools for random operators on tree-strips.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, help="model config JSON")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("check", help="validate the substitution-matrix assumptions")
    common(sp)
    sp.add_argument("--require", default="S1,S2,S3", help="comma list of S1,S2,S3,S3'")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("free-spectrum", help="free boundary values and the interval set I_S")
    common(sp)
    sp.add_argument("--grid")
    sp.add_argument("--eta-ladder")
    sp.set_defaults(func=cmd_free_spectrum)

    sp = sub.add_parser("window", help="determinant window conditions on an energy grid")
    common(sp)
    sp.add_argument("--grid")
    sp.add_argument("--eta-ladder")
    sp.set_defaults(func=cmd_window)

    sp = sub.add_parser("simulate", help="population dynamics and the a.c. indicator")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--pool", type=int, default=10_000)
    sp.add_argument("--eta-ladder")
    sp.add_argument("--energy", type=float, default=0.0)
    sp.add_argument("--lambda", dest="lam", type=float, help="override the config's lambda")
    sp.add_argument("--burn-in", type=int, default=200)
    sp.add_argument("--rung-burn-in", type=int, default=100)
    sp.add_argument("--measure", type=int, default=20)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle", help="exact finite-volume checks")
    common(sp)
    sp.add_argument("--depth", type=int, default=5)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lambda", dest="lam", type=float, help="override the config's lambda")
    sp.add_argument("--root-label", type=int, default=1, help="1-based label of the root")
    sp.add_argument("--grid")
    sp.add_argument("--bins", type=int, default=100)
    sp.add_argument("--slicing", action="store_true", help="count eigenvalues by inertia above the dense budget")
    sp.add_argument("--dof-budget", type=int, default=DEFAULT_DOF_BUDGET)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("susy-verify", help="randomised supersymmetric identity suite")
    common(sp, model=False)
    sp.add_argument("--sizes", default="1x1,2x1,2x2")
    sp.add_argument("--cases", type=int, default=10)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--mutate", choices=["j_block_sign"], help="inject a sign error (must fail)")
    sp.set_defaults(func=cmd_susy)
    return p


def _validate(args) -> None:
    _positive("workers", args.workers)
    for name in ("pool", "cases", "bins", "measure", "dof_budget"):
        _positive(name.replace("_", "-"), getattr(args, name, None))
    for name in ("burn_in", "rung_burn_in", "depth", "seed"):
        _positive(name.replace("_", "-"), getattr(args, name, None), allow_zero=True)


_VALUE_FLAGS = ("--grid", "--eta-ladder", "--energy", "--lambda")


def _attach_values(argv: Sequence[str]) -> list[str]:
    """Join ``--grid -4:4:0.01`` into ``--grid=-4:4:0.01`` so leading minus signs survive argparse."""
    out, it = [], iter(argv)
    for tok in it:
        if tok in _VALUE_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_attach_values(sys.argv[1:] if argv is None else argv))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _validate(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, disorder_mc.PoolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
