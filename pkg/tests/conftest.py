import numpy as np
import pytest

from gridshell import fixtures
from gridshell.acvt import extract_cvt, lloyd_relax, poisson_sample
from gridshell.deform import refine_until_fit
from gridshell.stress_field import PsiField

# flat isotropic regression fixture: 10 m square, R = 1, q = R/5, fixed RNG
REGRESSION_R = 1.0
REGRESSION_RNG = 0


@pytest.fixture(scope="session")
def acvt_regression():
    mesh = fixtures.jittered_square(40, 10.0, 0.3, 0)
    dom = refine_until_fit(mesh, PsiField.uniform(mesh), REGRESSION_R / 5)
    seeds = poisson_sample(dom, REGRESSION_R, rng_seed=REGRESSION_RNG)
    relaxed, vd = lloyd_relax(dom, seeds, max_iters=100)
    return dom, seeds, relaxed, vd, extract_cvt(dom, vd)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
