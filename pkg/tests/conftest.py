import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE = []


@pytest.fixture
def record():
    """``record(cid, title, ok, detail)``: log one acceptance line and return ``ok``."""
    def _record(cid, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {cid:>3} {title}: {detail}"
        ACCEPTANCE.append((cid, line))
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE, key=lambda r: int(r[0][1:])):
        terminalreporter.write_line(line)
