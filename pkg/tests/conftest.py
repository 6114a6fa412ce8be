from __future__ import annotations

import os
from pathlib import Path

import pytest

from seevo.core import Instance

ACCEPTANCE_LINES: list[str] = []


def benchmark_dir() -> Path:
    default = Path.home() / ".cache" / "seevo_jssp" / "benchmarks"
    return Path(os.environ.get("SEEVO_BENCHMARK_DIR", default))


@pytest.fixture
def two_by_two() -> Instance:
    return Instance.from_routes([[(0, 3), (1, 2)], [(1, 4), (0, 1)]])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
