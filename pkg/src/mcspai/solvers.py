"""Restarted GMRES and BiCGstab with an explicit approximate inverse.

Both solvers use left preconditioning, ``(M B) x = M b``, and start from
``x0 = 0``. Internal recurrences run on the preconditioned residual; once
that estimate reaches the target, the true residual ``||b - B x|| / ||b||``
is checked and only that decides convergence. If the check fails the
trigger level is tightened by the observed ratio and iteration resumes.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .sparse import CsrMatrix, spmv


class Method(str, enum.Enum):
    GMRES = "gmres"
    BICGSTAB = "bicgstab"


@dataclass(frozen=True)
class SolverConfig:
    method: Method = Method.GMRES
    rel_tol: float = 1e-6
    max_iters: int = 30000
    restart: int = 50

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1 or self.restart < 1:
            raise ValueError("max_iters and restart must be >= 1")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_rel_residual: float
    residual_history: np.ndarray
    wall_ms: float
    method: Method
    preconditioned: bool
    breakdown: bool = False
    x: np.ndarray = field(default=None, repr=False)


def _precond_matrix(precond) -> CsrMatrix | None:
    if precond is None:
        return None
    return precond if isinstance(precond, CsrMatrix) else precond.m


def _check_dims(b_mat: CsrMatrix, rhs: np.ndarray, m: CsrMatrix | None):
    if rhs.shape != (b_mat.n,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({b_mat.n},)")
    if m is not None and m.n != b_mat.n:
        raise ValueError(f"preconditioner is {m.n}x{m.n}, matrix is {b_mat.n}x{b_mat.n}")


def _true_rel(b_mat, rhs, x, rhs_norm):
    return float(np.linalg.norm(rhs - spmv(b_mat, x)) / rhs_norm)


def ones_rhs(b_mat: CsrMatrix) -> np.ndarray:
    """Right-hand side B @ 1."""
    return spmv(b_mat, np.ones(b_mat.n))


def solve(b_mat: CsrMatrix, rhs=None, precond=None, cfg: SolverConfig = SolverConfig()) -> SolveReport:
    if rhs is None:
        rhs = ones_rhs(b_mat)
    fn = gmres if cfg.method is Method.GMRES else bicgstab
    return fn(b_mat, rhs, precond, cfg)


def gmres(b_mat: CsrMatrix, rhs, precond=None, cfg: SolverConfig = SolverConfig()) -> SolveReport:
    t0 = time.perf_counter()
    rhs = np.asarray(rhs, dtype=np.float64)
    m = _precond_matrix(precond)
    _check_dims(b_mat, rhs, m)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0:
        raise ValueError("rhs must be nonzero")
    n = b_mat.n
    apply_m = (lambda v: v) if m is None else (lambda v: spmv(m, v))

    x = np.zeros(n)
    mb_norm = np.linalg.norm(apply_m(rhs))
    if mb_norm == 0:
        raise ValueError("preconditioned rhs vanishes")
    history = [1.0]
    trigger = cfg.rel_tol
    iters = 0
    converged = breakdown = False
    k = min(cfg.restart, n)
    true_rel = 1.0

    while iters < cfg.max_iters:
        z = apply_m(rhs - spmv(b_mat, x))
        beta = np.linalg.norm(z)
        if beta == 0.0:
            true_rel = _true_rel(b_mat, rhs, x, rhs_norm)
            converged = true_rel <= cfg.rel_tol
            break
        V = np.empty((k + 1, n))
        H = np.zeros((k + 1, k))
        cs = np.zeros(k)
        sn = np.zeros(k)
        g = np.zeros(k + 1)
        g[0] = beta
        V[0] = z / beta
        j_used = 0
        for j in range(k):
            w = apply_m(spmv(b_mat, V[j]))
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            h_next = np.linalg.norm(w)
            H[j + 1, j] = h_next
            for i in range(j):
                tmp = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = tmp
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            iters += 1
            j_used = j + 1
            est = abs(g[j + 1]) / mb_norm
            history.append(est)
            if h_next < 1e-14 * beta:
                breakdown = True
                break
            if est <= trigger or iters >= cfg.max_iters:
                break
            V[j + 1] = w / h_next
        y = _back_substitute(H[:j_used, :j_used], g[:j_used])
        x = x + V[:j_used].T @ y
        true_rel = _true_rel(b_mat, rhs, x, rhs_norm)
        if true_rel <= cfg.rel_tol:
            converged = True
            breakdown = False
            break
        if breakdown:
            break
        if est <= trigger:
            trigger = est * cfg.rel_tol / true_rel

    return SolveReport(
        converged=converged,
        iterations=iters,
        final_rel_residual=true_rel,
        residual_history=np.array(history),
        wall_ms=(time.perf_counter() - t0) * 1e3,
        method=Method.GMRES,
        preconditioned=m is not None,
        breakdown=breakdown and not converged,
        x=x,
    )


def _back_substitute(r: np.ndarray, g: np.ndarray) -> np.ndarray:
    y = np.zeros(g.size)
    for i in range(g.size - 1, -1, -1):
        y[i] = (g[i] - r[i, i + 1 :] @ y[i + 1 :]) / r[i, i]
    return y


def bicgstab(b_mat: CsrMatrix, rhs, precond=None, cfg: SolverConfig = SolverConfig(method=Method.BICGSTAB)) -> SolveReport:
    t0 = time.perf_counter()
    rhs = np.asarray(rhs, dtype=np.float64)
    m = _precond_matrix(precond)
    _check_dims(b_mat, rhs, m)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0:
        raise ValueError("rhs must be nonzero")
    apply_m = (lambda v: v) if m is None else (lambda v: spmv(m, v))

    def op(v):
        return apply_m(spmv(b_mat, v))

    x = np.zeros(b_mat.n)
    r = apply_m(rhs)
    mb_norm = np.linalg.norm(r)
    if mb_norm == 0:
        raise ValueError("preconditioned rhs vanishes")
    r_hat = r.copy()
    p = np.zeros_like(r)
    v = np.zeros_like(r)
    rho_old = alpha = omega = 1.0
    history = [1.0]
    trigger = cfg.rel_tol
    converged = breakdown = False
    true_rel = 1.0
    iters = 0

    def accept(candidate):
        nonlocal trigger, true_rel
        true_rel = _true_rel(b_mat, rhs, candidate, rhs_norm)
        if true_rel <= cfg.rel_tol:
            return True
        trigger = min(trigger, est * cfg.rel_tol / true_rel)
        return False

    while iters < cfg.max_iters:
        rho = r_hat @ r
        if abs(rho) < 1e-30:
            breakdown = True
            break
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        v = op(p)
        denom = r_hat @ v
        if denom == 0.0:
            breakdown = True
            break
        alpha = rho / denom
        s = r - alpha * v
        iters += 1
        est = np.linalg.norm(s) / mb_norm
        if est <= trigger:
            x_half = x + alpha * p
            if accept(x_half):
                x = x_half
                history.append(est)
                converged = True
                break
        t = op(s)
        tt = t @ t
        if tt == 0.0:
            x = x + alpha * p
            history.append(est)
            breakdown = True
            break
        omega = (t @ s) / tt
        x = x + alpha * p + omega * s
        r = s - omega * t
        est = np.linalg.norm(r) / mb_norm
        history.append(est)
        if est <= trigger and accept(x):
            converged = True
            break
        if omega == 0.0:
            breakdown = True
            break
        rho_old = rho

    if not converged:
        true_rel = _true_rel(b_mat, rhs, x, rhs_norm)
        converged = true_rel <= cfg.rel_tol
    return SolveReport(
        converged=converged,
        iterations=iters,
        final_rel_residual=true_rel,
        residual_history=np.array(history),
        wall_ms=(time.perf_counter() - t0) * 1e3,
        method=Method.BICGSTAB,
        preconditioned=m is not None,
        breakdown=breakdown and not converged,
        x=x,
    )
