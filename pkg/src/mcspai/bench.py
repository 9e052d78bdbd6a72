"""Result records, preconditioner files and the resumable parameter sweep."""

from __future__ import annotations

import csv
import itertools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import corpus
from .engine import ApproxInverse, McConfig, compute_preconditioner
from .solvers import SolverConfig, solve
from .sparse import CsrMatrix, parse_matrix_market, write_matrix_market

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class CsvRow:
    matrix: str
    n: int
    nnz: int
    method: str
    epsilon: float | str = ""
    delta: float | str = ""
    alpha: float | str = ""
    drop_fraction: float | str = ""
    retain_k: int | str = ""
    seed: int | str = ""
    precond_wall_ms: float | str = ""
    solver: str = ""
    iterations: int | str = ""
    converged: bool | str = ""
    final_rel_residual: float | str = ""
    solve_wall_ms: float | str = ""
    total_wall_ms: float | str = ""


CSV_FIELDS = [f.name for f in fields(CsvRow)]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_rows(path: str | os.PathLike, rows: list[CsvRow]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(CSV_FIELDS)
        for row in rows:
            w.writerow([_fmt(v) for v in asdict(row).values()])


def read_rows(path: str | os.PathLike) -> list[dict[str, str]]:
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_FIELDS:
            raise ConfigError(f"{path}: CSV header does not match the expected schema")
        return list(reader)


def write_rows(path: str | os.PathLike, rows: list[dict[str, str]]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, path)


# preconditioner files -------------------------------------------------------


def write_preconditioner(path: str | os.PathLike, approx: ApproxInverse) -> Path:
    """Write ``approx.m`` as Matrix Market plus a ``<path>.meta`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_matrix_market(approx.m, path)
    cfg = approx.config
    meta = {
        "seed": cfg.master_seed,
        "epsilon": cfg.epsilon,
        "delta": cfg.delta,
        "alpha": cfg.alpha,
        "mode": cfg.mode.value,
        "drop_fraction": cfg.drop_fraction,
        "drop_mode": cfg.drop_mode,
        "retain_k": "none" if cfg.retain_k is None else cfg.retain_k,
        "n_chains": approx.budget.n_chains,
        "max_len": approx.budget.max_len,
        "a_norm": approx.a_norm,
        "nnz_input": approx.nnz_input,
        "nnz_after_drop": approx.nnz_after_drop,
        "wall_ms": round(approx.wall_ms, 3),
    }
    meta_path = Path(str(path) + ".meta")
    meta_path.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in meta.items()))
    return meta_path


def read_meta(path: str | os.PathLike) -> dict[str, str]:
    meta_path = Path(str(path) + ".meta")
    if not meta_path.exists():
        return {}
    out = {}
    for line in meta_path.read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def load_matrix(ref: str) -> tuple[str, CsrMatrix]:
    """Resolve a file path or a corpus name to ``(label, matrix)``."""
    path = Path(ref)
    if path.is_file():
        return path.stem.removesuffix(".mtx"), parse_matrix_market(path)
    m = corpus.load(ref)
    if m is None:
        raise FileNotFoundError(f"no such matrix file or corpus entry: {ref}")
    return ref, m


def mc_fields(cfg: McConfig) -> dict:
    return {
        "epsilon": cfg.epsilon,
        "delta": cfg.delta,
        "alpha": cfg.alpha,
        "drop_fraction": cfg.drop_fraction,
        "retain_k": "none" if cfg.retain_k is None else cfg.retain_k,
        "seed": cfg.master_seed,
    }


# sweep specification ----------------------------------------------------------

_LIST_KEYS = {
    "matrices": str,
    "epsilons": float,
    "deltas": float,
    "alphas": float,
    "drop_fractions": float,
    "retain_ks": lambda s: None if s.lower() in ("none", "unlimited", "inf") else int(s),
    "solvers": str,
}
_SCALAR_KEYS = {
    "mode": str,
    "drop_mode": str,
    "repetitions": int,
    "seed": int,
    "tol": float,
    "max_iters": int,
    "restart": int,
}
_ALIASES = {"matrix": "matrices", "epsilon": "epsilons", "delta": "deltas", "alpha": "alphas",
            "drop": "drop_fractions", "retain_k": "retain_ks", "solver": "solvers", "reps": "repetitions"}


@dataclass
class SweepSpec:
    matrices: list[str]
    epsilons: list[float]
    deltas: list[float]
    alphas: list[float]
    drop_fractions: list[float]
    retain_ks: list[int | None]
    solvers: list[str]
    mode: str = "sign_aware"
    drop_mode: str = "value_range"
    repetitions: int = 10
    seed: int = 0
    tol: float = 1e-6
    max_iters: int = 30000
    restart: int = 50

    def cells(self):
        return itertools.product(
            self.matrices, self.epsilons, self.deltas, self.alphas, self.drop_fractions, self.retain_ks
        )


def parse_sweep_spec(text: str) -> SweepSpec:
    """Parse ``key = value`` lines; list keys take comma-separated values.

    ``#`` starts a comment. Unknown keys, empty lists and missing list keys
    are configuration errors.
    """
    values: dict = {"deltas": [0.0625], "alphas": [5.0], "drop_fractions": [0.0], "retain_ks": [None], "solvers": ["gmres"]}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = (s.strip() for s in line.partition("="))
        key = _ALIASES.get(key, key)
        try:
            if key in _LIST_KEYS:
                items = [t.strip() for t in value.split(",") if t.strip()]
                if not items:
                    raise ConfigError(f"line {lineno}: '{key}' must not be empty")
                values[key] = [_LIST_KEYS[key](t) for t in items]
            elif key in _SCALAR_KEYS:
                values[key] = _SCALAR_KEYS[key](value)
            else:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") from None
    for key in ("matrices", "epsilons"):
        if key not in values:
            raise ConfigError(f"missing required key '{key}'")
    bad = [s for s in values["solvers"] if s not in ("gmres", "bicgstab")]
    if bad:
        raise ConfigError(f"unknown solver(s): {', '.join(bad)}")
    if values.get("repetitions", 1) < 1:
        raise ConfigError("repetitions must be >= 1")
    return SweepSpec(**values)


# sweep runner -----------------------------------------------------------------


def _row_key(row: dict) -> tuple:
    return tuple(row[k] for k in ("matrix", "epsilon", "delta", "alpha", "drop_fraction", "retain_k", "seed", "solver"))


def _sort_key(row: dict):
    def num(v):
        try:
            return (0, float(v))
        except ValueError:
            return (1, v)

    return (row["matrix"],) + tuple(num(row[k]) for k in ("epsilon", "delta", "alpha", "drop_fraction", "retain_k", "seed")) + (
        row["solver"],
        row["method"],
    )


def _run_cell(label, mat, cfg: McConfig, solvers, scfg: SolverConfig, threads) -> list[CsvRow]:
    base = dict(matrix=label, n=mat.n, **mc_fields(cfg))
    try:
        approx = compute_preconditioner(mat, cfg, threads=threads)
    except Exception as exc:  # recorded as data, the sweep carries on
        log.warning("cell %s failed: %s", base, exc)
        return [
            CsvRow(nnz=mat.nnz, method=f"error:{type(exc).__name__}", solver=s, converged=False, **base)
            for s in solvers
        ]
    rows = []
    for s in solvers:
        t0 = time.perf_counter()
        rep = solve(mat, None, approx, replace(scfg, method=s))
        rows.append(
            CsvRow(
                nnz=approx.nnz_after_drop,
                method="P",
                precond_wall_ms=round(approx.wall_ms, 3),
                solver=s,
                iterations=rep.iterations,
                converged=rep.converged,
                final_rel_residual=rep.final_rel_residual,
                solve_wall_ms=round(rep.wall_ms, 3),
                total_wall_ms=round(approx.wall_ms + (time.perf_counter() - t0) * 1e3, 3),
                **base,
            )
        )
    return rows


def run_sweep(spec: SweepSpec, out_csv: str | os.PathLike, jobs: int = 1, threads: int | None = None) -> dict:
    """Run every (cell, repetition) not already present in ``out_csv``.

    Completed rows are appended as they finish; at the end the file is
    rewritten sorted by (matrix, parameters, seed, solver). Cells that
    previously failed are retried and their error rows replaced.
    """
    existing = [r for r in read_rows(out_csv) if not r["method"].startswith("error:")]
    done = {_row_key(r) for r in existing if r["method"] == "P"}
    if Path(out_csv).exists():
        write_rows(out_csv, existing)

    matrices = {ref: load_matrix(ref) for ref in spec.matrices}
    scfg = SolverConfig(rel_tol=spec.tol, max_iters=spec.max_iters, restart=spec.restart)
    todo = []
    skipped = 0
    for ref, eps, delta, alpha, drop, k in spec.cells():
        label, mat = matrices[ref]
        for rep in range(spec.repetitions):
            cfg = McConfig(epsilon=eps, delta=delta, alpha=alpha, mode=spec.mode, drop_fraction=drop,
                           drop_mode=spec.drop_mode, retain_k=k, master_seed=spec.seed + rep)
            missing = [
                s for s in spec.solvers
                if _row_key({k_: _fmt(v) for k_, v in dict(matrix=label, solver=s, **mc_fields(cfg)).items()}) not in done
            ]
            if not missing:
                skipped += 1
                continue
            todo.append((label, mat, cfg, missing))

    failures = 0
    written = 0

    def consume(rows):
        nonlocal failures, written
        append_rows(out_csv, rows)
        written += len(rows)
        failures += sum(r.method.startswith("error:") for r in rows)

    if jobs <= 1:
        for label, mat, cfg, missing in todo:
            consume(_run_cell(label, mat, cfg, missing, scfg, threads))
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, label, mat, cfg, missing, scfg, threads) for label, mat, cfg, missing in todo]
            for fut in as_completed(futures):
                consume(fut.result())

    rows = read_rows(out_csv)
    rows.sort(key=_sort_key)
    write_rows(out_csv, rows)
    return {"cells_run": len(todo), "cells_skipped": skipped, "rows_written": written, "failures": failures}
