import os
import sys
from functools import lru_cache

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "scripts"))

from make_hexagon_msh import hexagon_mesh  # noqa: E402

from layerdecay.mesh import GAMMA, boundary_partition, generate_rectangle_mesh, export_msh, import_msh  # noqa: E402

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


@lru_cache(maxsize=None)
def hexagon(n: int):
    """Hexagon mesh written to MSH and read back, as the experiments consume it."""
    return import_msh(export_msh(hexagon_mesh(n)), {1: GAMMA})


@lru_cache(maxsize=None)
def strip_mesh(nx: int, ny: int):
    """[0,2] x [0,1] grid with GAMMA on the left edge."""
    return boundary_partition(generate_rectangle_mesh(2.0, 1.0, nx, ny), lambda x, y: x < 1e-12)


def sin_pi_y(x, y):
    return np.sin(np.pi * y)


@pytest.fixture
def report():
    def add(criterion, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
