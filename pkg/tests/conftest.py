import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled in by test_acceptance.py; printed at the end of the run
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def uuv_app():
    from selfadapt.uuv import make_uuv_application

    return make_uuv_application()


@pytest.fixture(scope="session")
def fx_app():
    from selfadapt.fx import make_fx_application

    return make_fx_application()


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
