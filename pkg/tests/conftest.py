from pathlib import Path

import numpy as np
import pytest

from periodic_ldp.model import RateProtocol, complete_graph

ROOT = Path(__file__).resolve().parent.parent
_LINES = []


def record(line: str) -> None:
    """Queue a criterion line for the end-of-run summary and echo it."""
    _LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)


def sinusoidal_three_state(bins: int = 256, period: float = 1.0) -> RateProtocol:
    """Complete 3-state graph, every edge with its own phase-shifted sinusoid."""
    g = complete_graph(3)
    t = (np.arange(bins) + 0.5) / bins
    rates = np.array([1.0 + 0.5 * np.sin(2 * np.pi * (t + 0.1 * e)) + 0.3 * e
                      for e in range(g.n_edges)])
    return RateProtocol(g, period, rates)


@pytest.fixture
def tri():
    return sinusoidal_three_state()


@pytest.fixture
def rng():
    return np.random.default_rng(np.random.Philox(1234))


@pytest.fixture(autouse=True)
def _at_root(monkeypatch):
    # shipped configs are referenced relative to the repository root
    monkeypatch.chdir(ROOT)
