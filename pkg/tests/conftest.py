import numpy as np
import pytest

from delaystab.model import CoefficientSpec, DelaySpec, SystemSpec

# the worked-example majorant, as printed
A_TILDE = np.array([
    [0.0, 0.1, 0.505, 0.5, 0.0],
    [0.25, 0.0, 0.1, 0.1, 0.0],
    [0.25, 1.01, 0.0, 0.1, 0.0],
    [0.5, 0.0, 0.0, 0.0, 0.1],
    [0.1, 0.0, 0.0, 0.3, 0.0],
])

ACCEPTANCE_LINES: list[str] = []


def example_spec(h1="0.1*abs(sin(3*t))", tau1=0.1, h2="0.1*abs(cos(3*t))", tau2=0.1):
    return SystemSpec(
        a1=CoefficientSpec("1+0.01*abs(sin(t))", 1.0, 1.01),
        a2=CoefficientSpec("0.2+0.05*abs(cos(t))", 0.2, 0.25),
        a3=CoefficientSpec("-0.1*sin(10*t)", 0.0, 0.1, signed=True),
        b1=CoefficientSpec("0.2+0.1*abs(cos(2*t))", 0.2, 0.3),
        b2=CoefficientSpec("0.1*cos(t)", 0.0, 0.1, signed=True),
        h1=DelaySpec(h1, tau1),
        h2=DelaySpec(h2, tau2),
        h3=DelaySpec("8*sin(5*t)^2", 8.0),
        g1=DelaySpec("0.1*sin(t)^2", 0.1),
        g2=DelaySpec("5*cos(3*t)^2", 5.0),
    )


def constant_spec(a1=2.0, a2=1.0, a3=0.0, b1=1.0, b2=0.0, lags=(0, 0, 0, 0, 0), t0=0.0):
    c = CoefficientSpec.constant
    return SystemSpec(c(a1), c(a2), c(a3, signed=True), c(b1), c(b2, signed=True),
                      *(DelaySpec.constant(d) for d in lags), t0=t0)


@pytest.fixture
def example():
    return example_spec()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
