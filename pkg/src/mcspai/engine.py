"""Monte Carlo estimation of a sparse approximate inverse.

Every row ``r`` of ``(I - A)^{-1}`` is estimated from random walks that start
in state ``r`` and move according to the transition matrix ``P``. A walk
carries the weight ``W_j = W_{j-1} * a[s_{j-1}, s_j] / p[s_{j-1}, s_j]``
(``W_0 = 1``) and deposits it in column ``s_j`` at every step. Rows are
independent: each one owns a counter-based random stream keyed by
``(master_seed, row)``, so the result does not depend on how rows are
scheduled across threads.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .sparse import CsrMatrix, drop_small_entries
from .split import AugmentationMode, SplitSystem, augment_and_split

# z-value of the 50% two-sided confidence interval
_PROBABLE_ERROR = 0.6745
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class McConfig:
    epsilon: float = 0.0625
    delta: float = 0.0625
    alpha: float = 5.0
    mode: AugmentationMode = AugmentationMode.SIGN_AWARE
    drop_fraction: float = 0.0
    drop_mode: str = "value_range"
    retain_k: int | None = None
    chains_override: int | None = None
    max_len_override: int | None = None
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", AugmentationMode.parse(self.mode))
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.drop_fraction <= 1.0:
            raise ValueError(f"drop_fraction must lie in [0, 1], got {self.drop_fraction}")
        if self.drop_mode not in ("value_range", "count"):
            raise ValueError(f"unknown drop mode '{self.drop_mode}'")
        for name in ("retain_k", "chains_override", "max_len_override"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")


@dataclass(frozen=True)
class ChainBudget:
    """Chains per row, hard length cap, and the |W| cutoff ending a walk.

    ``weight_cutoff = 0`` disables weight truncation (length cap only).
    """

    n_chains: int
    max_len: int
    weight_cutoff: float = 0.0

    def __post_init__(self):
        if self.n_chains < 1 or self.max_len < 1:
            raise ValueError("n_chains and max_len must be >= 1")


@dataclass(frozen=True)
class RngStreamSpec:
    """A Philox4x64 stream keyed by ``(master_seed, stream_id)``.

    Philox is counter based with a 2**256 period; distinct keys give
    independent streams and the raw output is platform independent.
    """

    master_seed: int
    stream_id: int

    def bit_generator(self) -> np.random.Philox:
        key = (self.master_seed & _MASK64) | ((self.stream_id & _MASK64) << 64)
        return np.random.Philox(key=key)


def uniforms(bitgen: np.random.Philox, size: int) -> np.ndarray:
    """Doubles in [0, 1) built from the top 53 bits of raw 64-bit draws."""
    raw = bitgen.random_raw(size)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True, eq=False)
class ApproxInverse:
    m: CsrMatrix
    chains_used: np.ndarray
    entries_before_retention: np.ndarray
    config: McConfig
    budget: ChainBudget
    a_norm: float
    nnz_input: int
    nnz_after_drop: int
    wall_ms: float = field(default=0.0)

    @property
    def seed(self) -> int:
        return self.config.master_seed

    @property
    def n(self) -> int:
        return self.m.n


class _ChainTables:
    """Per-split lookup arrays shared read-only by all row workers."""

    def __init__(self, split: SplitSystem):
        p, a = split.p, split.a
        self.row_ptr = p.row_ptr
        self.cols = p.col_idx
        self.degree = np.diff(p.row_ptr)
        self.ratio = a.values / p.values
        nonempty = self.degree > 0
        cum = np.empty_like(p.values)
        for lo, hi in zip(p.row_ptr[:-1][nonempty].tolist(), p.row_ptr[1:][nonempty].tolist()):
            np.cumsum(p.values[lo:hi], out=cum[lo:hi])
            # u < 1 always lands inside the row
            cum[hi - 1] = 1.0
        self.cum = cum


def _tables(split: SplitSystem) -> _ChainTables:
    # cached on the instance dict; SplitSystem itself stays immutable
    t = split.__dict__.get("_chain_tables")
    if t is None:
        t = _ChainTables(split)
        split.__dict__["_chain_tables"] = t
    return t


def derive_chain_budget(cfg: McConfig, a_norm: float) -> ChainBudget:
    """Map (epsilon, delta) and ||A||_inf to chains per row and a length cap.

    N = ceil((0.6745 / (eps * (1 - ||A||)))^2), L = ceil(ln delta / ln ||A||),
    both at least 1; explicit overrides win.
    """
    if not 0.0 <= a_norm < 1.0:
        raise ValueError(f"||A||_inf must lie in [0, 1), got {a_norm}")
    if cfg.chains_override is not None:
        n_chains = cfg.chains_override
    else:
        n_chains = _ceil((_PROBABLE_ERROR / (cfg.epsilon * (1.0 - a_norm))) ** 2)
    if cfg.max_len_override is not None:
        max_len = cfg.max_len_override
    elif a_norm == 0.0:
        max_len = 1
    else:
        max_len = _ceil(math.log(cfg.delta) / math.log(a_norm))
    return ChainBudget(max(1, n_chains), max(1, max_len), weight_cutoff=cfg.delta)


def _ceil(x: float) -> int:
    # absorb round-off so that e.g. ln(0.25)/ln(0.5) maps to 2, not 3
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


def estimate_row(
    split: SplitSystem,
    r: int,
    budget: ChainBudget,
    stream: RngStreamSpec,
    scratch: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Estimate row ``r`` of ``(I - A)^{-1}`` as sparse ``(cols, values)``.

    A walk stops after depositing a weight with |W| < cutoff, on reaching
    a state with no outgoing transitions, or after ``max_len`` steps.
    Deposits are aggregated per step and per state before entering the
    accumulator, so a walk ensemble that is deterministic reproduces the
    truncated Neumann series bit for bit.
    """
    n = split.n
    t = _tables(split)
    N = budget.n_chains
    if scratch is None:
        scratch = np.zeros(n)
    scratch[r] += 1.0

    bitgen = stream.bit_generator()
    states = np.full(N, r, dtype=np.int64)
    weights = np.ones(N)
    if t.degree[r] == 0:
        states = states[:0]
        weights = weights[:0]
    for _ in range(budget.max_len):
        k = states.size
        if k == 0:
            break
        u = uniforms(bitgen, k)
        lo = t.row_ptr[states]
        hi = t.row_ptr[states + 1] - 1
        # vectorised bisection: first position in the row with cum > u
        while True:
            active = lo < hi
            if not active.any():
                break
            mid = (lo + hi) >> 1
            right = t.cum[mid] <= u
            lo = np.where(active & right, mid + 1, lo)
            hi = np.where(active & ~right, mid, hi)
        states = t.cols[lo]
        weights = weights * t.ratio[lo]

        # per-state sum as pivot * count + deviations: exact when all
        # deposits at a state are equal
        counts = np.bincount(states, minlength=n)
        ref = np.full(n, -np.inf)
        np.maximum.at(ref, states, weights)
        dev = np.bincount(states, weights=weights - ref[states], minlength=n)
        hit = np.flatnonzero(counts)
        # count / N (not count * (1/N)) is exactly 1 when every chain agrees
        scratch[hit] += ref[hit] * (counts[hit] / N) + dev[hit] / N

        alive = (np.abs(weights) >= budget.weight_cutoff) & (t.degree[states] > 0)
        states = states[alive]
        weights = weights[alive]

    cols = np.flatnonzero(scratch)
    vals = scratch[cols].copy()
    scratch[cols] = 0.0
    return cols, vals


def retain_top_k(cols: np.ndarray, vals: np.ndarray, k: int | None, diag: int | None = None):
    """Keep the ``k`` largest-magnitude entries, always including ``diag``.

    Ties are broken towards the smaller column index. Output stays sorted
    by column.
    """
    if k is None or cols.size <= k:
        return cols, vals
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.lexsort((cols, -np.abs(vals)))
    if diag is not None:
        at_diag = cols[order] == diag
        if at_diag.any():
            order = np.concatenate([order[at_diag], order[~at_diag]])
    keep = np.sort(order[:k])
    return cols[keep], vals[keep]


def scale_columns(m: CsrMatrix, b1_diag: np.ndarray) -> CsrMatrix:
    """Divide entry (r, c) by ``b1_diag[c]``: (I - A)^{-1} -> B_hat^{-1}."""
    return CsrMatrix(m.n, m.row_ptr, m.col_idx, m.values / b1_diag[m.col_idx])


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("MCSPAI_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def _estimate_rows(split, rows, budget, seed, k):
    scratch = np.zeros(split.n)
    out = []
    for r in rows:
        cols, vals = estimate_row(split, r, budget, RngStreamSpec(seed, r), scratch)
        before = cols.size
        cols, vals = retain_top_k(cols, vals, k, diag=r)
        out.append((cols, vals, before))
    return out


def compute_preconditioner(b: CsrMatrix, cfg: McConfig, threads: int | None = None) -> ApproxInverse:
    """Drop, augment, split, estimate every row, retain, column-scale."""
    t0 = time.perf_counter()
    dropped = drop_small_entries(b, cfg.drop_fraction, cfg.drop_mode)
    split = augment_and_split(dropped, cfg.alpha, cfg.mode)
    budget = derive_chain_budget(cfg, split.a_norm)
    _tables(split)

    n = b.n
    nworkers = min(resolve_threads(threads), max(1, n))
    bounds = np.linspace(0, n, nworkers + 1).astype(int)
    chunks = [range(bounds[i], bounds[i + 1]) for i in range(nworkers)]
    if nworkers == 1:
        parts = [_estimate_rows(split, chunks[0], budget, cfg.master_seed, cfg.retain_k)]
    else:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            parts = list(pool.map(lambda rows: _estimate_rows(split, rows, budget, cfg.master_seed, cfg.retain_k), chunks))
    results = [row for part in parts for row in part]

    lengths = np.array([c.size for c, _, _ in results], dtype=np.int64)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=row_ptr[1:])
    cols = np.concatenate([c for c, _, _ in results]) if n else np.zeros(0, dtype=np.int64)
    vals = np.concatenate([v for _, v, _ in results]) if n else np.zeros(0)
    estimate = CsrMatrix(n, row_ptr, cols, vals)
    m = scale_columns(estimate, split.b1_diag)
    wall_ms = (time.perf_counter() - t0) * 1e3
    return ApproxInverse(
        m=m,
        chains_used=np.full(n, budget.n_chains, dtype=np.int64),
        entries_before_retention=np.array([b_ for _, _, b_ in results], dtype=np.int64),
        config=cfg,
        budget=budget,
        a_norm=split.a_norm,
        nnz_input=b.nnz,
        nnz_after_drop=dropped.nnz,
        wall_ms=wall_ms,
    )
