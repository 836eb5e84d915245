import numpy as np
import pytest

from lunar_nmpc.cr3bp import EARTH_MOON
from lunar_nmpc.orbit import default_nrho, rendezvous_epoch


@pytest.fixture(scope="session")
def sys():
    return EARTH_MOON


@pytest.fixture(scope="session")
def nrho(sys):
    return default_nrho(sys)


@pytest.fixture(scope="session")
def t_rdv(nrho):
    return rendezvous_epoch(nrho, 6.0)


@pytest.fixture(scope="session")
def units(sys):
    """(meters per LU, m/s per VU, m/s^2 per AU)."""
    lu = sys.length_unit * 1e3
    tu = sys.time_unit
    return lu, lu / tu, lu / tu**2


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Criterion number -> (passed, detail); printed after the run."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    report = config.stash.get(_ACCEPTANCE, {})
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(report):
        ok, detail = report[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
