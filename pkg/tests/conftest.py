import numpy as np
import pytest

from extr.data import e1_config, gen_biased_gaussian


@pytest.fixture(scope="session")
def e1a():
    return gen_biased_gaussian(e1_config("A", seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
