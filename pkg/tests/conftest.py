import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")

import pytest

# one (criterion, passed, detail) entry per acceptance test, printed at the end
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def report(name, checks):
        """``checks`` is a list of (label, ok) pairs; fails the test unless all hold."""
        failed = [label for label, ok in checks if not ok]
        passed = not failed
        detail = "all checks hold" if passed else "; ".join(failed)
        ACCEPTANCE_LINES.append((name, passed, detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}", flush=True)
        assert passed, f"{name}: {detail}"
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
