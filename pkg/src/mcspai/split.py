"""Diagonal augmentation and the Markov-chain iteration/transition matrices."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .sparse import CsrMatrix, inf_norm


class AugmentationMode(str, enum.Enum):
    PLAIN = "plain"
    SIGN_AWARE = "sign_aware"

    @classmethod
    def parse(cls, value) -> "AugmentationMode":
        if isinstance(value, cls):
            return value
        aliases = {"sign": cls.SIGN_AWARE, "sign-aware": cls.SIGN_AWARE}
        key = str(value).lower()
        return aliases.get(key) or cls(key)


class DegenerateDiagonalError(ArithmeticError):
    def __init__(self, row: int):
        super().__init__(f"augmented diagonal entry of row {row} is zero")
        self.row = row


class DominanceError(ArithmeticError):
    def __init__(self, a_norm: float):
        super().__init__(f"iteration matrix is not contractive: ||A||_inf = {a_norm:.6g} >= 1")
        self.a_norm = a_norm


@dataclass(frozen=True, eq=False)
class SplitSystem:
    b_hat: CsrMatrix
    b1_diag: np.ndarray
    a: CsrMatrix
    p: CsrMatrix
    s_diag: np.ndarray
    a_norm: float
    b_norm: float

    @property
    def n(self) -> int:
        return self.b_hat.n


def _with_full_diagonal(b: CsrMatrix):
    """Triplets of ``b`` with an explicit (possibly zero) diagonal entry per row."""
    rows = b.row_ids()
    cols = b.col_idx
    vals = b.values
    missing = np.setdiff1d(np.arange(b.n), cols[rows == cols], assume_unique=True)
    if missing.size:
        rows = np.concatenate([rows, missing])
        cols = np.concatenate([cols, missing])
        vals = np.concatenate([vals, np.zeros(missing.size)])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
    return rows, cols, vals.copy()


def transition_probabilities(a: CsrMatrix) -> CsrMatrix:
    """Row-normalised magnitudes of ``a``; zero rows stay empty (absorbing)."""
    mags = np.abs(a.values)
    row_sums = np.bincount(a.row_ids(), weights=mags, minlength=a.n)
    probs = mags / row_sums[a.row_ids()] if a.nnz else mags
    return CsrMatrix(a.n, a.row_ptr, a.col_idx, probs)


def augment_and_split(b: CsrMatrix, alpha: float, mode=AugmentationMode.SIGN_AWARE) -> SplitSystem:
    """Shift the diagonal of ``b`` by alpha*||b||_inf and build A and P.

    In plain mode every diagonal gains +alpha*||b||; in sign-aware mode the
    shift follows the sign of the diagonal (zero counts as positive), so the
    result is strictly diagonally dominant for any alpha >= 1.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    mode = AugmentationMode.parse(mode)
    n = b.n
    b_norm = inf_norm(b)
    rows, cols, vals = _with_full_diagonal(b)
    on_diag = rows == cols
    d = vals[on_diag]
    shift = np.full(n, alpha * b_norm)
    if mode is AugmentationMode.SIGN_AWARE:
        shift = np.where(d < 0, -shift, shift)
    d_hat = d + shift
    zero = np.flatnonzero(d_hat == 0.0)
    if zero.size:
        raise DegenerateDiagonalError(int(zero[0]))
    vals[on_diag] = d_hat
    b_hat = CsrMatrix.from_coo(n, rows, cols, vals)
    s_diag = d_hat - d

    off = ~on_diag
    a = CsrMatrix.from_coo(n, rows[off], cols[off], -vals[off] / d_hat[rows[off]])
    a_norm = inf_norm(a)
    if a_norm >= 1.0:
        raise DominanceError(a_norm)
    return SplitSystem(
        b_hat=b_hat,
        b1_diag=d_hat,
        a=a,
        p=transition_probabilities(a),
        s_diag=s_diag,
        a_norm=a_norm,
        b_norm=b_norm,
    )
