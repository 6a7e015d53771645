import hypothesis
import numpy as np
import pytest
from hypothesis import strategies as st

from gsidl.graph import JUNCTION, RESERVOIR, NetworkGraph, Node

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")


def make_graph(n_nodes, edges, reservoirs=(0,), canonical=True):
    """Graph on nodes N0..N{n-1}; ``edges`` is a list of (a, b, length)."""
    nodes = [Node(f"N{i}", RESERVOIR if i in reservoirs else JUNCTION, 50.0 if i in reservoirs else 0.0)
             for i in range(n_nodes)]
    pipes = [{"id": f"P{k}", "from": f"N{a}", "to": f"N{b}", "length": w} for k, (a, b, w) in enumerate(edges)]
    return NetworkGraph.from_records(nodes, pipes, canonical=canonical)


@st.composite
def connected_graphs(draw, min_nodes=2, max_nodes=9, integer_lengths=False, max_reservoirs=2,
                     min_length=1.0, max_length=100.0):
    """Random connected graph: a random spanning tree plus a few extra edges."""
    n = draw(st.integers(min_nodes, max_nodes))
    length = st.integers(1, 5).map(float) if integer_lengths else st.floats(min_length, max_length)
    edges = {}
    for v in range(1, n):
        u = draw(st.integers(0, v - 1))
        edges[(u, v)] = draw(length)
    extra = draw(st.integers(0, n))
    for _ in range(extra):
        a, b = draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1))
        if a != b and (min(a, b), max(a, b)) not in edges:
            edges[(min(a, b), max(a, b))] = draw(length)
    k = draw(st.integers(1, min(max_reservoirs, n - 1)))
    reservoirs = tuple(draw(st.lists(st.integers(0, n - 1), min_size=k, max_size=k, unique=True)))
    return make_graph(n, [(a, b, w) for (a, b), w in edges.items()], reservoirs)


@pytest.fixture
def path3():
    """R - A - B with equal 1 m pipes (canonical order: R, A, B)."""
    nodes = [Node("R", RESERVOIR, 50.0), Node("A"), Node("B")]
    pipes = [{"id": "p1", "from": "R", "to": "A", "length": 1.0}, {"id": "p2", "from": "A", "to": "B", "length": 1.0}]
    return NetworkGraph.from_records(nodes, pipes)


def random_graph(rng, min_nodes=3, max_nodes=10, max_reservoirs=2):
    """Seeded counterpart of ``connected_graphs`` for plain loops."""
    n = int(rng.integers(min_nodes, max_nodes + 1))
    edges = {(int(rng.integers(0, v)), v): float(rng.uniform(1.0, 100.0)) for v in range(1, n)}
    for _ in range(int(rng.integers(0, n + 1))):
        a, b = sorted(int(x) for x in rng.integers(0, n, 2))
        if a != b:
            edges.setdefault((a, b), float(rng.uniform(1.0, 100.0)))
    k = int(rng.integers(1, min(max_reservoirs, n - 1) + 1))
    reservoirs = tuple(int(r) for r in rng.choice(n, size=k, replace=False))
    return make_graph(n, [(a, b, w) for (a, b), w in edges.items()], reservoirs)


# acceptance lines collected by test_acceptance.py and echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
