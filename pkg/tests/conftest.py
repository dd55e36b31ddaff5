import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        name, verdict, seconds = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} {name}: {verdict} ({seconds:.2f} s)")
