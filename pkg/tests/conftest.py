import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("cbomf", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cbomf")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA: list[tuple[int, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion and assert it."""

    def record(k: int, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}"
        _CRITERIA.append((k, bool(ok), line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
