"""Collects one verdict line per acceptance criterion for the summary."""

import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """``verdict(number, ok, detail)`` records the line and asserts ``ok``."""

    def record(number, ok, detail):
        _VERDICTS[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number}: {detail}"

    return record


@pytest.fixture
def verdict_note():
    """Record a criterion that is documented rather than measured."""

    def record(number, status, detail):
        _VERDICTS[number] = (status, detail)
        print(f"criterion {number}: {status}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS, key=lambda k: (int(str(k).split(".")[0]), str(k))):
        ok, detail = _VERDICTS[number]
        status = "PASS" if ok is True else ("FAIL" if ok is False else ok)
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
