from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report():
    """``report(n, ok, detail)`` records the verdict for acceptance criterion ``n``."""
    seen: list[int] = []

    def record(n: int, ok: bool, detail: str) -> None:
        seen.append(n)
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")

    yield record


def pytest_runtest_makereport(item, call):
    # a criterion test that errors before reporting still gets a FAIL line
    name = item.name
    if call.when == "call" and call.excinfo is not None and name.startswith("test_criterion_"):
        n = int(name.split("_")[2])
        if n not in _ACCEPTANCE or _ACCEPTANCE[n][0]:
            _ACCEPTANCE[n] = (False, f"raised {call.excinfo.typename}: {call.excinfo.value}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
