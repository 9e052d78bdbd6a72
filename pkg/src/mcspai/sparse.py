"""CSR matrices, Matrix Market I/O, norms and the small-entry filter.

Dense matrices are plain ``numpy.ndarray`` objects of shape ``(n, n)``.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import IO, Union

import numpy as np
import scipy.sparse as sp

PathOrStream = Union[str, os.PathLike, IO[str]]


class MatrixMarketError(ValueError):
    """Raised for malformed or unsupported Matrix Market input."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SingularMatrixError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Square compressed-sparse-row matrix with sorted, zero-free rows."""

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rp = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        for arr in (rp, ci, va):
            arr.setflags(write=False)
        object.__setattr__(self, "row_ptr", rp)
        object.__setattr__(self, "col_idx", ci)
        object.__setattr__(self, "values", va)
        object.__setattr__(self, "_scipy", None)
        self._validate()

    def _validate(self):
        n, rp, ci, va = self.n, self.row_ptr, self.col_idx, self.values
        if n < 0 or rp.shape != (n + 1,):
            raise ValueError("row_ptr must have length n + 1")
        if rp[0] != 0 or rp[-1] != ci.size or ci.size != va.size:
            raise ValueError("row_ptr does not match stored entries")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= n:
                raise ValueError("column index out of range")
            # strictly increasing within rows: a step may only fail at a row start
            bad = np.flatnonzero(np.diff(ci) <= 0) + 1
            row_starts = np.zeros(ci.size, dtype=bool)
            row_starts[rp[1:-1][rp[1:-1] < ci.size]] = True
            if np.any(~row_starts[bad]):
                raise ValueError("column indices must be strictly increasing within a row")
            if np.any(va == 0.0):
                raise ValueError("explicit zeros are not allowed")

    # construction -------------------------------------------------------

    @classmethod
    def from_coo(cls, n: int, rows, cols, vals) -> "CsrMatrix":
        """Build from triplets; duplicates are summed, zeros dropped."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise ValueError("index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            new = np.ones(rows.size, dtype=bool)
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(new)
            # sequential summation keeps duplicate handling order-stable
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
        return cls(n, row_ptr, cols, vals)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("expected a square 2-D array")
        rows, cols = np.nonzero(a)
        return cls.from_coo(a.shape[0], rows, cols, a[rows, cols])

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = sp.csr_matrix(m)
        if m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        coo = m.tocoo()
        return cls.from_coo(m.shape[0], coo.row, coo.col, coo.data)

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        idx = np.arange(n)
        return cls(n, np.arange(n + 1), idx, np.ones(n))

    # accessors ----------------------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.row_ptr))

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        on_diag = self.row_ids() == self.col_idx
        d[self.col_idx[on_diag]] = self.values[on_diag]
        return d

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.row_ids(), self.col_idx] = self.values
        return a

    def to_scipy(self) -> sp.csr_matrix:
        if self._scipy is None:
            m = sp.csr_matrix((self.values, self.col_idx, self.row_ptr), shape=self.shape)
            object.__setattr__(self, "_scipy", m)
        return self._scipy

    def scaled(self, c: float) -> "CsrMatrix":
        return CsrMatrix.from_coo(self.n, self.row_ids(), self.col_idx, self.values * c)

    def equals(self, other: "CsrMatrix") -> bool:
        """Structural and bitwise value equality."""
        return (
            self.n == other.n
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values.view(np.uint64), other.values.view(np.uint64))
        )

    def __repr__(self):
        return f"CsrMatrix(n={self.n}, nnz={self.nnz})"


@dataclass(frozen=True)
class ValueRange:
    min_abs: float
    max_abs: float


def value_range(m: CsrMatrix) -> ValueRange | None:
    """Magnitude range of the stored entries, or None for an empty matrix."""
    if m.nnz == 0:
        return None
    mags = np.abs(m.values)
    return ValueRange(float(mags.min()), float(mags.max()))


# Matrix Market --------------------------------------------------------------


def _open_text(src: PathOrStream, mode: str):
    if isinstance(src, (str, os.PathLike)):
        return open(src, mode, encoding="utf-8", errors="replace"), True
    return src, False


def parse_matrix_market(src: PathOrStream) -> CsrMatrix:
    """Read a real, square Matrix Market file (coordinate or array).

    Symmetric and skew-symmetric storage is expanded, duplicate coordinate
    entries are summed. Errors name the offending line.
    """
    fh, owned = _open_text(src, "r")
    try:
        text = fh.read()
    finally:
        if owned:
            fh.close()
    lines = text.splitlines()
    if not lines:
        raise MatrixMarketError("empty input", 1)

    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise MatrixMarketError("malformed header, expected '%%MatrixMarket matrix <format> <field> <symmetry>'", 1)
    fmt, field, symmetry = (h.lower() for h in header[2:])
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"unsupported format '{fmt}'", 1)
    if field == "complex":
        raise MatrixMarketError("complex matrices are not supported", 1)
    if field not in ("real", "integer", "double", "pattern"):
        raise MatrixMarketError(f"unsupported field '{field}'", 1)
    if symmetry not in ("general", "symmetric", "skew-symmetric"):
        raise MatrixMarketError(f"unsupported symmetry '{symmetry}'", 1)
    if field == "pattern" and fmt == "array":
        raise MatrixMarketError("pattern field requires coordinate format", 1)

    # skip comments and blank lines up to the size line
    pos = 1
    while pos < len(lines) and (not lines[pos].strip() or lines[pos].lstrip().startswith("%")):
        pos += 1
    if pos == len(lines):
        raise MatrixMarketError("missing size line", pos)
    size_lineno = pos + 1
    try:
        sizes = [int(t) for t in lines[pos].split()]
    except ValueError:
        raise MatrixMarketError(f"bad size line '{lines[pos].strip()}'", size_lineno) from None
    expected = 3 if fmt == "coordinate" else 2
    if len(sizes) != expected:
        raise MatrixMarketError(f"size line needs {expected} integers", size_lineno)
    nrows, ncols = sizes[0], sizes[1]
    if nrows != ncols:
        raise MatrixMarketError(f"matrix is not square ({nrows}x{ncols})", size_lineno)
    n = nrows

    body = [(k, ln) for k, ln in enumerate(lines[pos + 1 :], start=pos + 2) if ln.strip() and not ln.lstrip().startswith("%")]

    if fmt == "coordinate":
        nnz = sizes[2]
        ntok = 2 if field == "pattern" else 3
        if len(body) != nnz:
            where = body[nnz][0] if len(body) > nnz else (body[-1][0] if body else size_lineno)
            raise MatrixMarketError(f"expected {nnz} entries, found {len(body)}", where)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.ones(nnz)
        for k, (lineno, ln) in enumerate(body):
            tok = ln.split()
            if len(tok) != ntok:
                raise MatrixMarketError(f"expected {ntok} fields, got {len(tok)}", lineno)
            try:
                i, j = int(tok[0]), int(tok[1])
                if ntok == 3:
                    vals[k] = float(tok[2])
            except ValueError:
                raise MatrixMarketError(f"cannot parse entry '{ln.strip()}'", lineno) from None
            if not (1 <= i <= n and 1 <= j <= n):
                raise MatrixMarketError(f"index ({i}, {j}) out of range", lineno)
            rows[k], cols[k] = i - 1, j - 1
    else:
        if symmetry == "general":
            rows, cols = np.divmod(np.arange(n * n), n)
            cols, rows = rows, cols  # column-major storage
        else:
            jj, ii = np.triu_indices(n, 0 if symmetry == "symmetric" else 1)
            rows, cols = ii, jj  # lower triangle, column by column
            order = np.lexsort((rows, cols))
            rows, cols = rows[order], cols[order]
        if len(body) != rows.size:
            raise MatrixMarketError(f"expected {rows.size} values, found {len(body)}", body[-1][0] if body else size_lineno)
        vals = np.empty(rows.size)
        for k, (lineno, ln) in enumerate(body):
            tok = ln.split()
            if len(tok) != 1:
                raise MatrixMarketError("expected a single value", lineno)
            try:
                vals[k] = float(tok[0])
            except ValueError:
                raise MatrixMarketError(f"cannot parse value '{tok[0]}'", lineno) from None

    if symmetry != "general":
        off = rows != cols
        sign = -1.0 if symmetry == "skew-symmetric" else 1.0
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, sign * vals[off]]),
        )
    return CsrMatrix.from_coo(n, rows, cols, vals)


def write_matrix_market(m: CsrMatrix, dst: PathOrStream, comment: str | None = None) -> None:
    """Write coordinate/real/general storage with 17 significant digits."""
    buf = io.StringIO()
    buf.write("%%MatrixMarket matrix coordinate real general\n")
    if comment:
        for ln in comment.splitlines():
            buf.write(f"% {ln}\n")
    buf.write(f"{m.n} {m.n} {m.nnz}\n")
    rows = m.row_ids() + 1
    cols = m.col_idx + 1
    buf.writelines(f"{i} {j} {v:.17g}\n" for i, j, v in zip(rows.tolist(), cols.tolist(), m.values.tolist()))
    fh, owned = _open_text(dst, "w")
    try:
        fh.write(buf.getvalue())
    finally:
        if owned:
            fh.close()


# norms and filtering --------------------------------------------------------


def inf_norm(m: CsrMatrix) -> float:
    """max_i sum_j |m_ij|."""
    if m.nnz == 0:
        return 0.0
    return float(np.bincount(m.row_ids(), weights=np.abs(m.values), minlength=m.n).max())


def drop_small_entries(m: CsrMatrix, p: float, mode: str = "value_range") -> CsrMatrix:
    """Remove small off-diagonal entries; the diagonal is never touched.

    ``value_range``: drop |v| < min_abs + p * (max_abs - min_abs), where the
    range is taken over all stored entries.
    ``count``: drop the floor(p * k) smallest of the k off-diagonal entries
    (ties resolved by storage order).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"drop fraction must lie in [0, 1], got {p}")
    if p == 0.0 or m.nnz == 0:
        return m
    rows = m.row_ids()
    off = rows != m.col_idx
    mags = np.abs(m.values)
    if mode == "value_range":
        vr = value_range(m)
        threshold = vr.min_abs + p * (vr.max_abs - vr.min_abs)
        keep = ~off | (mags >= threshold)
    elif mode == "count":
        off_idx = np.flatnonzero(off)
        n_drop = int(np.floor(p * off_idx.size))
        order = np.argsort(mags[off_idx], kind="stable")
        keep = np.ones(m.nnz, dtype=bool)
        keep[off_idx[order[:n_drop]]] = False
    else:
        raise ValueError(f"unknown drop mode '{mode}'")
    if keep.all():
        return m
    return CsrMatrix.from_coo(m.n, rows[keep], m.col_idx[keep], m.values[keep])


def dense_inverse_oracle(a, pivot_tol: float = 1e-12) -> np.ndarray:
    """Gauss-Jordan inversion with partial pivoting (test oracle)."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("expected a square matrix")
    aug = np.hstack([a, np.eye(n)])
    for k in range(n):
        piv = k + int(np.argmax(np.abs(aug[k:, k])))
        if abs(aug[piv, k]) <= pivot_tol:
            raise SingularMatrixError(f"pivot {k} has magnitude {abs(aug[piv, k]):.3e}")
        if piv != k:
            aug[[k, piv]] = aug[[piv, k]]
        aug[k] /= aug[k, k]
        factors = aug[:, k].copy()
        factors[k] = 0.0
        aug -= np.outer(factors, aug[k])
    return aug[:, n:]


def spmv(m: CsrMatrix, x) -> np.ndarray:
    """y = m @ x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.n,):
        raise ValueError(f"dimension mismatch: matrix is {m.n}x{m.n}, vector has shape {x.shape}")
    return m.to_scipy() @ x

