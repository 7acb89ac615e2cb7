import numpy as np
import pytest

from imuvie import synthgen


@pytest.fixture(scope="session")
def small_config():
    return synthgen.SynthConfig(n_subjects=3, pickups_per_recording=2, turns_per_recording=1, seed=11)


@pytest.fixture(scope="session")
def small_records(small_config):
    return synthgen.generate_subjects(small_config)


@pytest.fixture(scope="session")
def default_records():
    return synthgen.generate_subjects(synthgen.SynthConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number: int, name: str, ok: bool, detail: str = ""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
