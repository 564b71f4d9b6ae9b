import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, str] = {}


class Criterion:
    """Records one acceptance line; ``check`` stores it and then asserts."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title

    def check(self, ok: bool, detail: str, seconds: float, limit_s: float | None = None):
        timed_ok = limit_s is None or seconds < limit_s
        passed = bool(ok) and timed_ok
        budget = f" (limit {limit_s:g} s)" if limit_s is not None else ""
        line = (f"criterion {self.number:2d} {'PASS' if passed else 'FAIL'}: {self.title}: "
                f"{detail}; {seconds:.1f} s{budget}")
        _CRITERIA[self.number] = line
        print(line)
        assert ok, line
        assert timed_ok, line


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
