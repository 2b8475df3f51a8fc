import numpy as np
import pytest

from slfv_lab.torus import Field, TorusGrid


def band_limited(grid: TorusGrid, kmax: int, seed: int = 0) -> Field:
    """Random real field with Fourier support in ``|k| <= kmax``."""
    g = np.random.default_rng(seed)
    spec = np.zeros(grid.shape, dtype=complex)
    k = grid.freqs
    mask = np.sqrt(np.sum(k.astype(float) ** 2, axis=0)) <= kmax
    spec[mask] = g.standard_normal(mask.sum()) + 1j * g.standard_normal(mask.sum())
    vals = np.fft.ifftn(spec).real
    return Field(grid, vals / np.abs(vals).max())


def random_field(grid: TorusGrid, seed: int = 0) -> Field:
    return Field(grid, np.random.default_rng(seed).standard_normal(grid.shape))


@pytest.fixture
def grid1():
    return TorusGrid(1, 16)


@pytest.fixture
def grid2():
    return TorusGrid(2, 8)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
