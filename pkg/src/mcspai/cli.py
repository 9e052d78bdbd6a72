"""``mcspai`` command line: precondition, solve, bench, recover."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .bench import (
    ConfigError,
    CsvRow,
    append_rows,
    load_matrix,
    mc_fields,
    parse_sweep_spec,
    read_meta,
    run_sweep,
    write_preconditioner,
)
from .engine import McConfig, compute_preconditioner
from .recovery import RecoveryPlan, recover_inverse
from .solvers import SolverConfig, ones_rhs, solve
from .sparse import CsrMatrix, drop_small_entries, parse_matrix_market, write_matrix_market
from .split import AugmentationMode, augment_and_split

log = logging.getLogger("mcspai")


class CliError(Exception):
    pass


def _retain(value: str):
    if value.lower() in ("none", "unlimited", "inf"):
        return None
    k = int(value)
    if k < 1:
        raise argparse.ArgumentTypeError("retain-k must be >= 1")
    return k


def _mode(value: str) -> AugmentationMode:
    try:
        return AugmentationMode.parse(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown mode '{value}' (use sign or plain)") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcspai", description="Monte Carlo sparse approximate inverse preconditioners")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precondition", help="compute preconditioners, one per repetition")
    p.add_argument("--matrix", required=True, help="Matrix Market file or corpus name")
    p.add_argument("--epsilon", type=float, default=0.0625)
    p.add_argument("--delta", type=float, default=0.0625)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--mode", type=_mode, default=AugmentationMode.SIGN_AWARE, help="sign (default) or plain")
    p.add_argument("--drop", type=float, default=0.0, help="fraction for the small-entry filter")
    p.add_argument("--drop-mode", choices=["value_range", "count"], default="value_range")
    p.add_argument("--retain-k", type=_retain, default=None, help="entries kept per row (default: all)")
    p.add_argument("--chains", type=int, default=None, help="override chains per row")
    p.add_argument("--max-len", type=int, default=None, help="override chain length cap")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: MCSPAI_THREADS or CPU count)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--csv", default=None, help="CSV to append to (default: OUT/precondition.csv)")

    s = sub.add_parser("solve", help="run GMRES or BiCGstab, optionally preconditioned")
    s.add_argument("--matrix", required=True)
    s.add_argument("--precond", default=None, help="preconditioner Matrix Market file")
    s.add_argument("--solver", choices=["gmres", "bicgstab"], default="gmres")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iters", type=int, default=30000)
    s.add_argument("--restart", type=int, default=50)
    s.add_argument("--rhs", default="ones-product", help="vector file (one value per line) or 'ones-product'")
    s.add_argument("--csv", default=None, help="CSV to append the result to")

    b = sub.add_parser("bench", help="run a parameter sweep from a spec file")
    b.add_argument("--spec", required=True)
    b.add_argument("--out", required=True, help="consolidated CSV")
    b.add_argument("--jobs", type=int, default=1, help="cells run concurrently")
    b.add_argument("--threads", type=int, default=None)

    r = sub.add_parser("recover", help="dense recovery of B^-1 from a preconditioner")
    r.add_argument("--matrix", required=True)
    r.add_argument("--precond", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--alpha", type=float, default=None, help="defaults to the value in the .meta sidecar")
    r.add_argument("--mode", type=_mode, default=None)
    r.add_argument("--drop", type=float, default=None)
    r.add_argument("--max-n", type=int, default=4096)
    return parser


def cmd_precondition(args) -> int:
    label, mat = load_matrix(args.matrix)
    if args.reps < 1:
        raise CliError("--reps must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = Path(args.csv) if args.csv else out / "precondition.csv"
    for rep in range(args.reps):
        cfg = McConfig(
            epsilon=args.epsilon,
            delta=args.delta,
            alpha=args.alpha,
            mode=args.mode,
            drop_fraction=args.drop,
            drop_mode=args.drop_mode,
            retain_k=args.retain_k,
            chains_override=args.chains,
            max_len_override=args.max_len,
            master_seed=args.seed + rep,
        )
        approx = compute_preconditioner(mat, cfg, threads=args.threads)
        path = out / f"{label}_P_rep{rep}.mtx"
        write_preconditioner(path, approx)
        append_rows(
            csv_path,
            [
                CsvRow(
                    matrix=label,
                    n=mat.n,
                    nnz=approx.nnz_after_drop,
                    method="P",
                    precond_wall_ms=round(approx.wall_ms, 3),
                    total_wall_ms=round(approx.wall_ms, 3),
                    **mc_fields(cfg),
                )
            ],
        )
        print(
            f"rep {rep}: seed={cfg.master_seed} N={approx.budget.n_chains} L={approx.budget.max_len} "
            f"||A||={approx.a_norm:.4f} nnz(M)={approx.m.nnz} time={approx.wall_ms:.1f} ms -> {path}"
        )
    return 0


def _meta_value(meta, key, cast, default=""):
    v = meta.get(key)
    if v is None or v == "none":
        return default if v is None else v
    try:
        return cast(v)
    except ValueError:
        return default


def cmd_solve(args) -> int:
    label, mat = load_matrix(args.matrix)
    precond = None
    meta = {}
    if args.precond:
        try:
            precond = parse_matrix_market(args.precond)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read preconditioner {args.precond}: {exc}") from None
        if precond.n != mat.n:
            raise CliError(f"dimension mismatch: matrix is {mat.n}x{mat.n}, preconditioner is {precond.n}x{precond.n}")
        meta = read_meta(args.precond)
    if args.rhs == "ones-product":
        rhs = ones_rhs(mat)
    else:
        rhs = np.loadtxt(args.rhs, dtype=np.float64, ndmin=1)
        if rhs.shape != (mat.n,):
            raise CliError(f"rhs has {rhs.size} entries, expected {mat.n}")
    cfg = SolverConfig(method=args.solver, rel_tol=args.tol, max_iters=args.max_iters, restart=args.restart)
    rep = solve(mat, rhs, precond, cfg)
    precond_ms = _meta_value(meta, "wall_ms", float, 0.0) if precond is not None else 0.0
    tag = "P" if precond is not None else "none"
    print(
        f"{args.solver} [{tag}] converged={rep.converged} iterations={rep.iterations} "
        f"rel_residual={rep.final_rel_residual:.3e}{' (breakdown)' if rep.breakdown else ''}"
    )
    print(f"solve time: {rep.wall_ms:.3f} ms")
    if precond is not None:
        print(f"preconditioner time: {precond_ms:.3f} ms, total: {precond_ms + rep.wall_ms:.3f} ms")
    if args.csv:
        fields = {}
        if precond is not None:
            fields = {
                "epsilon": _meta_value(meta, "epsilon", float),
                "delta": _meta_value(meta, "delta", float),
                "alpha": _meta_value(meta, "alpha", float),
                "drop_fraction": _meta_value(meta, "drop_fraction", float),
                "retain_k": _meta_value(meta, "retain_k", int),
                "seed": _meta_value(meta, "seed", int),
                "precond_wall_ms": precond_ms,
            }
        append_rows(
            args.csv,
            [
                CsvRow(
                    matrix=label,
                    n=mat.n,
                    nnz=_meta_value(meta, "nnz_after_drop", int, mat.nnz),
                    method=tag,
                    solver=args.solver,
                    iterations=rep.iterations,
                    converged=rep.converged,
                    final_rel_residual=rep.final_rel_residual,
                    solve_wall_ms=round(rep.wall_ms, 3),
                    total_wall_ms=round(precond_ms + rep.wall_ms, 3),
                    **fields,
                )
            ],
        )
    return 0


def cmd_bench(args) -> int:
    try:
        text = Path(args.spec).read_text()
    except OSError as exc:
        raise CliError(f"cannot read spec file: {exc}") from None
    spec = parse_sweep_spec(text)
    t0 = time.perf_counter()
    summary = run_sweep(spec, args.out, jobs=args.jobs, threads=args.threads)
    print(
        f"cells run: {summary['cells_run']}, skipped: {summary['cells_skipped']}, "
        f"rows written: {summary['rows_written']}, failures: {summary['failures']}, "
        f"elapsed: {(time.perf_counter() - t0) * 1e3:.1f} ms -> {args.out}"
    )
    return 1 if summary["failures"] else 0


def cmd_recover(args) -> int:
    label, mat = load_matrix(args.matrix)
    if mat.n > args.max_n:
        raise CliError(f"recovery is dense O(n^3); n={mat.n} exceeds --max-n {args.max_n}")
    precond = parse_matrix_market(args.precond)
    if precond.n != mat.n:
        raise CliError("dimension mismatch between matrix and preconditioner")
    meta = read_meta(args.precond)
    alpha = args.alpha if args.alpha is not None else _meta_value(meta, "alpha", float, None)
    if alpha is None:
        raise CliError("--alpha is required when the preconditioner has no .meta sidecar")
    mode = args.mode or AugmentationMode.parse(meta.get("mode", "sign_aware"))
    drop = args.drop if args.drop is not None else _meta_value(meta, "drop_fraction", float, 0.0)
    dropped = drop_small_entries(mat, drop, meta.get("drop_mode", "value_range"))
    split = augment_and_split(dropped, alpha, mode)
    if meta.get("retain_k", "none") != "none":
        log.warning("preconditioner was truncated to %s entries per row; truncation error propagates", meta["retain_k"])
    t0 = time.perf_counter()
    inv = recover_inverse(precond.to_dense(), RecoveryPlan.from_split(split))
    ms = (time.perf_counter() - t0) * 1e3
    write_matrix_market(CsrMatrix.from_dense(inv), args.out)
    print(f"recovered inverse of {label} ({mat.n}x{mat.n}) in {ms:.1f} ms -> {args.out}")
    return 0


COMMANDS = {
    "precondition": cmd_precondition,
    "solve": cmd_solve,
    "bench": cmd_bench,
    "recover": cmd_recover,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, ConfigError, OSError, ValueError, ArithmeticError) as exc:
        print(f"mcspai {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
