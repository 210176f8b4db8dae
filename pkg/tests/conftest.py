import numpy as np
import pytest

from prodelib import corpus as C


@pytest.fixture(scope="session")
def grammar():
    return C.GrammarSpec.from_dict(C.default_grammar())


@pytest.fixture(scope="session")
def small_data(grammar):
    return C.generate(grammar, {"train": 200, "valid": 40, "test": 40}, seed=3)


@pytest.fixture(scope="session")
def small_vocab(small_data):
    return C.Vocab.build(small_data)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns the pass flag so the test can assert on it."""
    def record(number: int, passed: bool, detail: str) -> bool:
        _criteria[number] = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_criteria):
            terminalreporter.write_line(_criteria[number])
