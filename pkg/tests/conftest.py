from __future__ import annotations

import pytest

from aclink.params import ConverterParams
from aclink.simulation import preset, run


@pytest.fixture(scope="session")
def params() -> ConverterParams:
    return ConverterParams()


def _run(name: str):
    return run(preset(name))


@pytest.fixture(scope="session")
def fig10_run():
    return _run("fig10")


@pytest.fixture(scope="session")
def fig8_run():
    return _run("fig8")


@pytest.fixture(scope="session")
def fig13_run():
    return _run("fig13")


@pytest.fixture(scope="session")
def fig14_run():
    return _run("fig14")


# --------------------------------------------------------------------------
# Acceptance verdicts, echoed in the terminal summary
# --------------------------------------------------------------------------

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    lines = request.config.stash[VERDICTS]

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {n:2d}: {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
