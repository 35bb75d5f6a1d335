import os

REPORT = os.path.join(os.path.dirname(__file__), "acceptance_report.txt")


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance pass/fail lines past output capture."""
    if os.path.exists(REPORT):
        terminalreporter.section("acceptance criteria")
        with open(REPORT) as fp:
            terminalreporter.write(fp.read())
