import random

import pytest
from hypothesis import strategies as st

from rgstat.graph import RootedPatch


def random_patch(rng: random.Random, n: int, degree_bound: int = 3, alphabet_size: int = 2,
                 extra_edges: int | None = None) -> RootedPatch:
    """Connected patch on ``n`` vertices: random tree plus random extra edges, degree-capped."""
    deg = [0] * n
    edges = set()
    for v in range(1, n):
        options = [u for u in range(v) if deg[u] < degree_bound]
        if not options:
            break
        u = rng.choice(options)
        edges.add((u, v))
        deg[u] += 1
        deg[v] += 1
    n = 1 + len(edges)  # vertices that got attached
    tries = rng.randint(0, n) if extra_edges is None else extra_edges
    for _ in range(tries):
        u, v = rng.sample(range(n), 2) if n > 1 else (0, 0)
        if u == v or (min(u, v), max(u, v)) in edges:
            continue
        if deg[u] < degree_bound and deg[v] < degree_bound:
            edges.add((min(u, v), max(u, v)))
            deg[u] += 1
            deg[v] += 1
    marks = {v: rng.randrange(alphabet_size) for v in range(n)}
    return RootedPatch.build(marks, edges, rng.randrange(n), degree_bound, alphabet_size)


def shuffled(patch: RootedPatch, rng: random.Random) -> RootedPatch:
    """Same patch under a random injective relabelling of vertex ids."""
    ids = [v for v, _ in patch.vertices]
    new = rng.sample(range(-10**9, 10**9), len(ids))
    return patch.relabel(dict(zip(ids, new)))


@st.composite
def patches(draw, max_vertices: int = 8, degree_bound: int = 3, alphabet_size: int = 2):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(1, max_vertices))
    return random_patch(random.Random(seed), n, degree_bound, alphabet_size)


@pytest.fixture
def rng():
    return random.Random(12345)
