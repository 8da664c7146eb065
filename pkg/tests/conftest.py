import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cvflow.field_linalg import ModField  # noqa: E402
from cvflow.open_graph import OpenGraph  # noqa: E402


def random_open_graph(rng: np.random.Generator, d: int, n: int, io: int, density: float = 0.45) -> OpenGraph:
    """Random ``Z_d`` open graph with ``io`` inputs and ``io`` outputs (disjoint)."""
    adj = np.zeros((n, n), dtype=np.int64)
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < density:
                adj[a, b] = adj[b, a] = int(rng.integers(1, d))
    perm = rng.permutation(n)
    return OpenGraph(
        tuple(f"v{i}" for i in range(n)),
        ModField(d),
        adj,
        tuple(int(v) for v in perm[:io]),
        tuple(int(v) for v in perm[n - io :]),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


ACCEPTANCE_RESULTS: dict[object, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS, key=str):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
