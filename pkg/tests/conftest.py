import contextlib

ACCEPTANCE_LINES: list[str] = []


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line for an acceptance criterion.

    The body may put a short ``detail`` string into the yielded dict; it is
    appended to the line either way.
    """
    info = {"detail": ""}
    try:
        yield info
    except BaseException:
        line = f"FAIL criterion {number}: {title}"
        raise
    else:
        line = f"PASS criterion {number}: {title}"
    finally:
        if info["detail"]:
            line += f" [{info['detail']}]"
        ACCEPTANCE_LINES.append(line)
        print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
