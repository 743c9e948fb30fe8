import numpy as np
import pytest

ACCEPTANCE_LINES = []


class StubNormalRNG:
    """Returns queued arrays from ``standard_normal`` so a sampler's output can
    be read off as an exact linear map of its noise."""

    def __init__(self, *arrays):
        self.queue = [np.asarray(a, dtype=float) for a in arrays]

    def standard_normal(self, size=None):
        out = self.queue.pop(0)
        assert out.shape == (size,) or size is None
        return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def record_acceptance(number, title, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
