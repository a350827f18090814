import numpy as np
import pytest

from volterra_dp.kernels import Domain, ExponentialKernel, PolynomialKernel, SeparableKernel, StateFactor

_ACCEPTANCE = []


@pytest.fixture
def record():
    """Collect one pass/fail line per acceptance criterion for the terminal summary."""
    def _record(criterion, passed, detail):
        _ACCEPTANCE.append((criterion, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def dom():
    return Domain(1.0, -2.0, 2.0, -1.0, 1.0)


@pytest.fixture
def t2x(dom):
    """f = t^2 x."""
    return PolynomialKernel.linear([(0, 0, 0), (0, 0, 0), (0, 1, 0)], dom)


@pytest.fixture
def et_x(dom):
    """f = e^t x."""
    return ExponentialKernel(beta=1.0, a=1.0, domain=dom)


@pytest.fixture
def identity_x(dom):
    """f = x."""
    return SeparableKernel(state_factor=StateFactor(a=1.0), domain=dom)
