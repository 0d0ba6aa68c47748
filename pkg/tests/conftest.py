import pytest

# (criterion number, title, passed, seconds, detail), filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, secs, detail in sorted(ACCEPTANCE):
        line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {title} ({secs:.1f}s)"
        if detail:
            line += f" - {detail}"
        terminalreporter.write_line(line)
