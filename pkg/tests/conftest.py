import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance bookkeeping: each acceptance test records its verdict before
# asserting, and the collected lines are printed once at the end of the
# session so every criterion shows up as one pass/fail line


def pytest_configure(config):
    config._criterion_results = []


@pytest.fixture
def criterion(request):
    def record(number: int, ok: bool, detail: str) -> None:
        request.config._criterion_results.append((number, bool(ok), detail))
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criterion_results", [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(results):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {detail}")
