import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from brickcraft.geometry import OffsetSetId, enumerate_offsets
from brickcraft.targets import _OPEN, random_construction

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def build(seed, n, offset_set=OffsetSetId.FULL, bounds=_OPEN):
    """A random valid assembly of exactly n bricks (retries on dead ends)."""
    rng = np.random.default_rng(seed)
    offsets = enumerate_offsets(offset_set)
    while True:
        out = random_construction(rng, n, offsets, bounds)
        if out is not None:
            return out[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed together at the end of the run
AC_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(AC_RESULTS, key=lambda k: int(k.split("-")[1])):
        ok, detail = AC_RESULTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
