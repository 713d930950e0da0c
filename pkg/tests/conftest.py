import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from massnet.dataio import Dataset, synth_forcing, water_year_dates

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def forcing_2y():
    """Two water years of seeded synthetic forcing."""
    dates = water_year_dates(2001, 2)
    pp, pet = synth_forcing(np.random.default_rng(7), dates)
    return dates, pp, pet


@pytest.fixture(scope="session")
def obs_dataset(forcing_2y):
    """Forcing with a smooth positive pseudo-observation series."""
    dates, pp, pet = forcing_2y
    q = np.convolve(pp, np.exp(-np.arange(30) / 8.0) / 8.0)[:len(pp)] + 0.1
    return Dataset(dates, pp, pet, q)


_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        _criteria[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title}")
