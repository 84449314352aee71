import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def kernels(request):
    """Every available kernel module, for parametrised backend tests."""
    return request.param


def pytest_generate_tests(metafunc):
    if "kernels" in metafunc.fixturenames:
        from coevolve import _kernels_py

        mods = [pytest.param(_kernels_py, id="python")]
        try:
            from coevolve import _kernels

            mods.append(pytest.param(_kernels, id="cython"))
        except ImportError:
            mods.append(pytest.param(None, id="cython", marks=pytest.mark.skip(reason="extension not built")))
        metafunc.parametrize("kernels", mods, indirect=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
