from __future__ import annotations

import os
from pathlib import Path

import pytest

ACCEPTANCE_LINES: list[str] = []

DATASET_ENV = {"wn18rr": "KGTUNER_WN18RR", "fb15k-237": "KGTUNER_FB15K237"}


def dataset_dir(name: str) -> Path | None:
    """Directory of a benchmark dataset named by its environment variable, if present."""
    value = os.environ.get(DATASET_ENV[name])
    if not value:
        return None
    path = Path(value)
    if not all((path / f"{s}.txt").is_file() for s in ("train", "valid", "test")):
        return None
    return path


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion for the terminal summary."""

    def record(number: int, verdict: str, detail: str) -> None:
        line = f"criterion {number}: {verdict} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
