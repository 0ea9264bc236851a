import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_ran: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.failed or report.when == "call":
        _ran.setdefault(n, report.outcome)
        if report.failed:
            _ran[n] = "failed"


def pytest_terminal_summary(terminalreporter):
    if not _ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ran):
        ok, detail = acceptance_log.RESULTS.get(n, (False, f"test {_ran[n]} before recording a verdict"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
