import json
from pathlib import Path

import numpy as np
import pytest

from treestrip.model import SubstitutionModel, VerticalOperator

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def bethe2():
    return SubstitutionModel(np.array([[2]]))


@pytest.fixture
def mixed_model():
    return SubstitutionModel(np.array([[2, 1], [2, 2]]))


@pytest.fixture
def det_zero_model():
    return SubstitutionModel(np.array([[4, 3], [2, 3]]))


@pytest.fixture
def vertical2():
    return VerticalOperator(np.diag([-0.5, 0.5]))


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="model.json") -> Path:
        p = tmp_path / name
        p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
        return p

    return write
