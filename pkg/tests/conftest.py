import sys

import numpy as np
import pytest

from misclass_mte.model import DgpSpec, MisclassSpec
from misclass_mte.simulator import sample_dgp


@pytest.fixture(scope="session")
def sample_rho0_a03():
    """n = 1e5 draw from the default design, rho = 0, alpha = 0.3, seed 42."""
    spec = DgpSpec(MisclassSpec.copula(0.3, 0.0), n=100_000, seed=42)
    return spec, sample_dgp(spec, latent=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[num])
