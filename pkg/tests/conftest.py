import numpy as np
import pytest

from abcmodel import ModelParams, RateTable, ReservoirDensities

LEFT = ReservoirDensities(0.5, 0.3, 0.2)
RIGHT = ReservoirDensities(0.2, 0.3, 0.5)


def make_params(N=10, beta=1.0, beta_tilde=1.0, theta=1.0, delta=1.0, left=LEFT, right=RIGHT):
    return ModelParams(N, beta, beta_tilde, theta, delta, left, right)


class MisSignedRightRates(RateTable):
    """Right boundary with the sign of the beta_tilde term flipped."""

    def boundary(self, side, s):
        if side != "right":
            return super().boundary(side, s)
        p = self.params
        sym, asym = p.boundary_sym, p.boundary_asym
        r = p.right
        return (sym + asym) * r[(s + 1) % 3], (sym - asym) * r[(s + 2) % 3]


@pytest.fixture
def params():
    return make_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def missigned_rates():
    return MisSignedRightRates


# one status line per acceptance criterion, echoed in the terminal summary
CRITERION_LINES: dict[int, str] = {}


def record_criterion(k: int, passed: bool, detail: str) -> str:
    line = f"{'PASS' if passed else 'FAIL'} criterion {k}: {detail}"
    CRITERION_LINES[k] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERION_LINES):
            terminalreporter.write_line(CRITERION_LINES[k])
