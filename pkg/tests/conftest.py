import numpy as np
import pytest

from gridtopo.grid import GridGraph, Impedance, RadialTree, generate_random_feeder
from gridtopo.lcpf import InjectionStats, random_injection_stats


def chain(r=1.0, x=1.0):
    """0-1-2 with identical lines."""
    z = Impedance(r, x)
    return RadialTree.from_edges(3, [(1, 0, z), (2, 1, z)])


def star(r=1.0, x=1.0):
    """0-1 with 2 and 3 hanging off 1."""
    z = Impedance(r, x)
    return RadialTree.from_edges(4, [(1, 0, z), (2, 1, z), (3, 1, z)])


def tree_grid(tree, extra=()):
    edges = [(min(u, v), max(u, v), z) for u, v, z in tree.edges] + list(extra)
    return GridGraph(tree.num_nodes, tuple(edges), operational=tree.edge_set)


def uniform_stats(n, vp, vq, c):
    return InjectionStats.from_covariances(np.full(n, vp), np.full(n, vq), np.full(n, c))


@pytest.fixture
def phi_fixture():
    """Chain with r=1, x=0.5 per line and stats (1, 0.25, 0.25) at both load nodes."""
    return chain(1.0, 0.5), uniform_stats(2, 1.0, 0.25, 0.25)


def random_instance(seed, n=None, extra=None):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 51)) if n is None else n
    cap = (n - 1) * (n - 2) // 2 - (n - 2)
    extra = int(rng.integers(20, 41)) if extra is None else extra
    grid, tree = generate_random_feeder(n, min(extra, cap), seed=rng)
    stats = random_injection_stats(n - 1, seed=rng)
    return grid, tree, stats


ACCEPTANCE: dict[int, str] = {}


def report(number: int, ok: bool, detail: str) -> bool:
    """Record one acceptance line; the terminal summary prints them in order."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
