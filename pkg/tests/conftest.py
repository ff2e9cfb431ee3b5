import time
from contextlib import contextmanager

import pytest

_ACCEPTANCE: dict[int, str] = {}


@contextmanager
def _criterion(number: int, title: str, limit_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        _ACCEPTANCE[number] = f"FAIL  criterion {number}: {title} ({elapsed:.2f}s) -- {type(exc).__name__}: {exc}"
        raise
    elapsed = time.perf_counter() - start
    if elapsed >= limit_s:
        _ACCEPTANCE[number] = f"FAIL  criterion {number}: {title} ({elapsed:.2f}s >= {limit_s:g}s limit)"
        pytest.fail(f"criterion {number} took {elapsed:.2f}s, limit {limit_s:g}s")
    _ACCEPTANCE[number] = f"PASS  criterion {number}: {title} ({elapsed:.2f}s < {limit_s:g}s)"


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
