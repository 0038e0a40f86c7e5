def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for tid in sorted(mod.RESULTS, key=lambda t: int(t[1:])):
        terminalreporter.write_line(mod.RESULTS[tid])
