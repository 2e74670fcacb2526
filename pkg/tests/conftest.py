import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_results: dict[str, tuple[str, str]] = {}


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = m.group(1)
    name = m.group(2).replace("_", " ")
    failed = report.failed
    if report.when == "call" or failed:
        prev = _results.get(key)
        status = "FAIL" if failed or (prev and prev[0] == "FAIL") else "PASS"
        _results[key] = (status, name)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_results, key=int):
        status, name = _results[key]
        terminalreporter.write_line(f"criterion {int(key):2d}: {status}  {name}")
