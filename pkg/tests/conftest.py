import numpy as np
import pytest

from folmod import MetricChart, SubmersionFoliation

E = np.e


@pytest.fixture(scope="session")
def annulus():
    return MetricChart.annulus(1.0, E)


@pytest.fixture(scope="session")
def rect():
    return MetricChart.rectangle(2.0, 1.0)


@pytest.fixture(scope="session")
def circles(annulus):
    return SubmersionFoliation(annulus, "u")


@pytest.fixture(scope="session")
def radial(annulus):
    return SubmersionFoliation(annulus, "v")


@pytest.fixture(scope="session")
def horizontal(rect):
    return SubmersionFoliation(rect, "v")


@pytest.fixture(scope="session")
def wavy(rect):
    return SubmersionFoliation(rect, "v+0.1*sin(pi*u)*sin(pi*v)")


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def verdict(request):
    """Record one ``PASS``/``FAIL`` line for the terminal summary and return a checker.

    ``verdict(label, ok, detail)`` stores the line and fails the test when
    ``ok`` is false, so the summary and the test outcome always agree.
    """
    lines = request.config.stash[_ACCEPTANCE]

    def record(label, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
        assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
