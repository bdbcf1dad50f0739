def pytest_terminal_summary(terminalreporter):
    """Collect the per-criterion lines recorded by the acceptance suite."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
