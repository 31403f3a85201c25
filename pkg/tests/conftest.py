import numpy as np
import pytest

from lsmdetect.core import BasisSet, gram_schmidt
from lsmdetect.synth import fourier_bessel_basis


@pytest.fixture(scope="session")
def fb16():
    return fourier_bessel_basis(16, 5)


@pytest.fixture(scope="session")
def fb8():
    return fourier_bessel_basis(8, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_basis(rng, M, B, d=2):
    """Orthonormal basis from random templates (independent of Fourier-Bessel)."""
    return gram_schmidt(rng.standard_normal((M,) + (B,) * d))


def dirac_basis(B=1, d=2):
    f = np.zeros((1,) + (B,) * d)
    f[(0,) + (B // 2,) * d] = 1.0
    return BasisSet(f)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
