import numpy as np
import pytest

from qbmor import HessianTensor, QBSystem


def random_stable_qb(rng, n, m=1, p=1, h_scale=0.3, n_scale=0.3, linear=False):
    """Random QB system with Hurwitz ``A`` (spectral abscissa <= -0.5)."""
    M = rng.standard_normal((n, n))
    S = rng.standard_normal((n, n))
    A = -(M @ M.T) / n - 0.5 * np.eye(n) + 0.5 * (S - S.T) / np.sqrt(n)
    if linear:
        H = HessianTensor.zeros(n)
        N = tuple(np.zeros((n, n)) for _ in range(m))
    else:
        H = HessianTensor(h_scale * rng.standard_normal((n, n * n)) / n)
        N = tuple(n_scale * rng.standard_normal((n, n)) / np.sqrt(n) for _ in range(m))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    return QBSystem(A=A, H=H, N=N, B=B, C=C)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
