import numpy as np
import pytest

from cglsteer.spectral import GridSpec, analyze


@pytest.fixture
def grid1():
    return GridSpec(1, 64)


def field_from(grid, fn):
    return analyze(grid, np.asarray(fn(*grid.points), dtype=complex))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one result line per acceptance criterion."""
    def record(criterion: str, ok: bool, detail: str):
        line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
