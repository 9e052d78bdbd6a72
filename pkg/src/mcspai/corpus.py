"""Test matrices: named collection files when available, generators otherwise.

Collection matrices (``rdb2048``, ``bcsstk38``, ...) are looked up as
``<name>.mtx`` in the directory given by ``MCSPAI_DATA`` (or an explicit
``data_dir``). ``rdb2048`` falls back to a locally generated matrix with
the same origin and sparsity structure: the Jacobian of the 2-D Brusselator
reaction-diffusion model on a 32x32 interior grid (n = 2048, nnz = 12032).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sparse import CsrMatrix, parse_matrix_market


def _laplacian_2d(m: int) -> sp.csr_matrix:
    t = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1])
    eye = sp.identity(m)
    return (sp.kron(eye, t) + sp.kron(t, eye)).tocsr()


def brusselator_2d(
    m: int = 32,
    dx: float = 0.008,
    dy: float = 0.004,
    a: float = 2.0,
    b: float = 5.45,
    length: float = 0.51302,
) -> CsrMatrix:
    """Jacobian of the Brusselator wave model at its steady state.

    Unknowns are ordered ``[u (m*m), v (m*m)]`` on an m x m interior grid
    of the unit square with Dirichlet boundaries.
    """
    h = 1.0 / (m + 1)
    tau_u = dx / (h * length) ** 2
    tau_v = dy / (h * length) ** 2
    lap = _laplacian_2d(m)
    eye = sp.identity(m * m)
    jac = sp.bmat(
        [
            [tau_u * lap + (b - 1.0) * eye, a * a * eye],
            [-b * eye, tau_v * lap - a * a * eye],
        ]
    )
    return CsrMatrix.from_scipy(jac)


def tridiagonal(n: int, lower: float = -1.0, diag: float = 2.0, upper: float = -1.0) -> CsrMatrix:
    t = sp.diags([np.full(n - 1, lower), np.full(n, diag), np.full(n - 1, upper)], [-1, 0, 1])
    return CsrMatrix.from_scipy(t)


def convection_diffusion_2d(m: int, peclet: float = 10.0) -> CsrMatrix:
    """Upwind finite differences for -lap(u) + c . grad(u) on an m x m grid."""
    h = 1.0 / (m + 1)
    c = peclet * h
    one = np.ones(m)
    t = sp.diags([-(1.0 + c) * one[1:], (2.0 + c) * one, -one[1:]], [-1, 0, 1])
    eye = sp.identity(m)
    return CsrMatrix.from_scipy((sp.kron(eye, t) + sp.kron(t, eye)).tocsr())


def random_sparse(n: int, density: float, seed: int = 0, diag_shift: float = 0.0) -> CsrMatrix:
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, (n, n))
    a[rng.random((n, n)) >= density] = 0.0
    a[np.diag_indices(n)] += diag_shift
    return CsrMatrix.from_dense(a)


def banded_magnitudes(
    n: int = 200,
    bands: tuple[tuple[float, int], ...] = ((0.05, 20), (0.23, 4), (0.35, 3), (0.6, 2)),
    anchor: float = 5.0,
    jitter: float = 0.03,
    seed: int = 0,
) -> CsrMatrix:
    """Matrix whose off-diagonal magnitudes sit in well separated bands.

    ``bands`` lists ``(magnitude, entries per row)``. Row 0 holds only the
    diagonal ``anchor``, which fixes both ||B||_inf and the top of the value
    range; every other row has the banded off-diagonals and a diagonal of
    0.1. Each band carries a similar share of the row mass, so dropping a
    band lowers ||A||_inf markedly.
    """
    rng = np.random.default_rng(seed)
    mags_row = np.concatenate([np.full(cnt, mag) for mag, cnt in bands])
    width = mags_row.size
    rows, cols, vals = [0], [0], [anchor]
    for i in range(1, n):
        others = rng.choice(np.delete(np.arange(n), i), size=width, replace=False)
        mags = mags_row * rng.uniform(1.0 - jitter, 1.0 + jitter, width)
        signs = rng.choice([-1.0, 1.0], size=width)
        rows += [i] * (width + 1)
        cols += [i] + others.tolist()
        vals += [0.1] + (signs * mags).tolist()
    return CsrMatrix.from_coo(n, rows, cols, vals)


def data_dir(explicit: str | os.PathLike | None = None) -> Path | None:
    d = explicit or os.environ.get("MCSPAI_DATA")
    return Path(d) if d else None


def find_collection_file(name: str, directory: str | os.PathLike | None = None) -> Path | None:
    d = data_dir(directory)
    if d is None:
        return None
    for candidate in (d / f"{name}.mtx", d / name / f"{name}.mtx"):
        if candidate.is_file():
            return candidate
    return None


def load(name: str, directory: str | os.PathLike | None = None) -> CsrMatrix | None:
    """Load a named matrix; returns None if it is neither on disk nor generable."""
    path = find_collection_file(name, directory)
    if path is not None:
        return parse_matrix_market(path)
    if name == "rdb2048":
        return brusselator_2d(32)
    return None


def is_surrogate(name: str, directory: str | os.PathLike | None = None) -> bool:
    return find_collection_file(name, directory) is None
