"""Suite-wide pytest hooks: the acceptance-criteria result banner."""

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def record_criterion(number: int, description: str, passed: bool,
                     detail: str = "") -> None:
    """Store one criterion outcome for the end-of-run banner."""
    _CRITERIA[number] = ("PASS" if passed else "FAIL", description, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        outcome, description, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {outcome}  {description}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
