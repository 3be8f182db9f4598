import numpy as np
import pytest

from stochlag.torus import TorusGrid


def band_limited(grid: TorusGrid, seed: int, kmax: int = 6, channels: tuple = ()) -> np.ndarray:
    """Random real field whose Fourier support lies in 0 < |k| <= kmax."""
    rng = np.random.default_rng(seed)
    k = np.sqrt(grid.kmag2)
    shape = (*channels, *k.shape)
    fh = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * ((k > 0) & (k <= kmax))
    return grid.ifft(fh * grid.n**2 / 10)


@pytest.fixture
def grid32():
    return TorusGrid(32)


@pytest.fixture
def grid64():
    return TorusGrid(64)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def _report(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
