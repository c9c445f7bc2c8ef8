def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one pass/fail line per acceptance-criterion test."""
    reports = []
    for key in ("passed", "failed"):
        reports += [
            r
            for r in terminalreporter.stats.get(key, [])
            if r.when == "call" and "test_acceptance.py" in r.nodeid
        ]
    if not reports:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for rep in sorted(reports, key=lambda r: r.nodeid):
        status = "PASS" if rep.passed else "FAIL"
        name = rep.nodeid.split("::")[-1]
        terminalreporter.write_line(f"[{status}] {name}")
