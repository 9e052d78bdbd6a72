import numpy as np
import pytest
from hypothesis import settings

from mcspai import CsrMatrix

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def record_criterion(key: str, status: str, detail: str) -> None:
    _ACCEPTANCE[key] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0])):
        status, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"[{status}] {key}: {detail}")


def random_ddm(n: int, seed: int, density: float = 0.5, margin: float = 1.5) -> np.ndarray:
    """Random dense matrix with |b_ii| = margin * sum_{j != i} |b_ij|."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, (n, n))
    a[rng.random((n, n)) >= density] = 0.0
    np.fill_diagonal(a, 0.0)
    off = np.abs(a).sum(axis=1)
    signs = rng.choice([-1.0, 1.0], n)
    np.fill_diagonal(a, signs * margin * np.maximum(off, 0.5))
    return a


@pytest.fixture
def small_b() -> CsrMatrix:
    return CsrMatrix.from_dense([[1.0, -2.0], [3.0, 4.0]])
