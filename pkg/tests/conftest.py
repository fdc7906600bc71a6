import functools

import pytest

from formctl.scenario import build_pipeline, load_scenario

_REPORT: list[str] = []


def record(line: str) -> None:
    print(line)
    _REPORT.append(line)


@pytest.fixture
def report():
    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def pipeline(name: str, variant: str | None = None):
    return build_pipeline(load_scenario(name), variant=variant)


@pytest.fixture(scope="session")
def passages():
    return pipeline("paper_sec5")
