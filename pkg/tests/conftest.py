import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@st.composite
def day_sets(draw, max_day=400, max_size=60, min_size=1):
    """Sorted distinct day numbers."""
    days = draw(st.sets(st.integers(0, max_day), min_size=min_size, max_size=max_size))
    return np.array(sorted(days), dtype=np.int64)


@pytest.fixture(scope="session")
def small_cohort():
    from shelterfl.synthgen import CohortSpec, gen_cohort

    return gen_cohort(CohortSpec(n_clients=1500, seed=11))


# acceptance criteria outcomes, printed once at the end of the session
CRITERIA: dict[str, tuple[bool, str]] = {}
CRITERION_ORDER = ("1", "2", "3", "4", "5 fast", "5 full", "6", "7", "8", "9")


@pytest.fixture
def criterion():
    def record(key: str, passed: bool, detail: str) -> bool:
        assert key in CRITERION_ORDER
        CRITERIA[key] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in CRITERION_ORDER:
        if key in CRITERIA:
            passed, detail = CRITERIA[key]
            terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'} ({detail})")
        else:
            terminalreporter.write_line(f"criterion {key}: NOT RUN")
