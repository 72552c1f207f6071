import acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in acceptance_log.RESULTS:
        terminalreporter.write_line(f"[{acceptance_log.status(ok)}] {name}: {detail}")
