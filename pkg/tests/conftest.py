import pytest
from hypothesis import settings

# first calls compile numba kernels, so per-example deadlines are meaningless
settings.register_profile("default", deadline=None)
settings.load_profile("default")

_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one summary line: criterion(n, status, detail)."""

    def record(n: int, status: str, detail: str) -> str:
        line = f"criterion {n}: {status:4s} {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return status

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
