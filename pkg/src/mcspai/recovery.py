"""Undo the diagonal augmentation: B_hat^{-1} -> B^{-1} by rank-one updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularUpdateError(ArithmeticError):
    def __init__(self, index: int, denom: float):
        super().__init__(f"update {index} is singular: |1 - s_i * M_ii| = {abs(denom):.3e}")
        self.index = index


@dataclass(frozen=True)
class RecoveryPlan:
    """Diagonal perturbation S = B_hat - B and the order its entries are removed."""

    s_diag: np.ndarray
    order: np.ndarray | None = None

    def indices(self) -> np.ndarray:
        if self.order is not None:
            return np.asarray(self.order)
        return np.arange(len(self.s_diag) - 1, -1, -1)

    @classmethod
    def from_split(cls, split) -> "RecoveryPlan":
        return cls(np.asarray(split.s_diag, dtype=np.float64))


def recover_inverse(b_hat_inv, plan: RecoveryPlan, tol: float = 1e-12) -> np.ndarray:
    """Apply M <- M + s_i M e_i e_i^T M / (1 - s_i M_ii) for i = n-1, ..., 0.

    Each step removes one diagonal entry of S, i.e. inverts B_{i-1} = B_i - S_i
    from the inverse of B_i (Sherman-Morrison), at O(n^2) cost.
    """
    m = np.array(b_hat_inv, dtype=np.float64)
    n = m.shape[0]
    if m.shape != (n, n) or len(plan.s_diag) != n:
        raise ValueError("dimension mismatch between inverse and recovery plan")
    if not tol > 0:
        raise ValueError("tol must be positive")
    for i in plan.indices():
        s = plan.s_diag[i]
        if s == 0.0:
            continue
        denom = 1.0 - s * m[i, i]
        if abs(denom) <= tol:
            raise SingularUpdateError(int(i), denom)
        col = m[:, i].copy()
        row = m[i, :] * (s / denom)
        m += np.outer(col, row)
    return m
