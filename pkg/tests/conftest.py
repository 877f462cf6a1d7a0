import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criterion scoreboard past output capture."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
