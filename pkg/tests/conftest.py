import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record an acceptance verdict line, printed in the terminal summary."""

    def record(key, ok, detail):
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[key] = line
        print(line)
        return ok

    return record


def _sort_key(key):
    head = "".join(ch for ch in key if ch.isdigit())
    return (int(head) if head else 0, key)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_VERDICTS, key=_sort_key):
        terminalreporter.write_line(_VERDICTS[key])
