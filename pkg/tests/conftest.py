"""Collects one verdict line per acceptance criterion for the terminal summary."""

import pytest

_VERDICTS: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def verdict():
    """``verdict(n, title, ok, detail)`` records criterion ``n`` then asserts it."""

    def record(n: int, title: str, ok: bool, detail: str = "") -> None:
        _VERDICTS[n] = (bool(ok), title, detail)
        assert ok, f"criterion {n} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, title, detail = _VERDICTS[n]
        line = f"[{'PASS' if ok else 'FAIL'}] {n}. {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
