import numpy as np
import pytest

from cohort_scr.cohort import Cohort, SumsSpec, generate_sums
from cohort_scr.market import MarketModel, calibrate_gbm
from cohort_scr.mortality import build_basis, fit_lee_carter, synthetic_dataset
from cohort_scr.streams import stream
from cohort_scr.valuation import ValuationBasis, solve_premium


@pytest.fixture(scope="session")
def italy_like():
    return synthetic_dataset()


@pytest.fixture(scope="session")
def lc_params(italy_like):
    return fit_lee_carter(italy_like)


@pytest.fixture(scope="session")
def market():
    return MarketModel(calibrate_gbm(1.15, 1.0, 10.0))


@pytest.fixture(scope="session")
def table1_basis(lc_params):
    return build_basis(lc_params, 50, 10, 1.2)


@pytest.fixture(scope="session")
def table1_cohort():
    sums = generate_sums(SumsSpec(100_000.0, 2.0), 10_000, stream(20190101, "sums"))
    return Cohort(50, 10, sums, "single")


@pytest.fixture(scope="session")
def issue_basis(table1_basis, market):
    return ValuationBasis(table1_basis, market)


@pytest.fixture(scope="session")
def table1_premium(table1_cohort, issue_basis):
    return solve_premium(table1_cohort, issue_basis)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""
    def record(name: str, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
