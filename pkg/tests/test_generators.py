import itertools
from collections import Counter

import numpy as np
import pytest

from rgstat.basis import BasisRegistry
from rgstat.errors import OracleError
from rgstat.generators import (
    MarkovTreeModel,
    OffspringLaw,
    TransitiveGraphSpec,
    agw_oracle,
    build_oracle,
    markov_tree_oracle,
    model_summary,
    transitive_oracle,
)
from rgstat.graph import ball
from rgstat.inference import walk_down
from rgstat.sampling import reroot_divergence

FAIR = OffspringLaw((0.5, 0.5), 3)
STICKY = MarkovTreeModel(
    1,
    {((1, 0),): {(1, 0): 0.9, (2, 0): 0.1}, ((2, 0),): {(1, 0): 0.1, (2, 0): 0.9}},
    3,
)
ALTERNATING = MarkovTreeModel(1, {((1, 0),): {(2, 0): 1.0}, ((2, 0),): {(1, 0): 1.0}}, 3)


# --- validation --------------------------------------------------------------------


@pytest.mark.parametrize("probs, M", [
    ((0.5, 0.4), 3),        # sums to 0.9
    ((0.5, 0.5), 2),        # 2 children + parent exceeds M = 2
    ((-0.1, 1.1), 3),
    ((), 3),
])
def test_invalid_offspring_law(probs, M):
    with pytest.raises(ValueError):
        OffspringLaw(probs, M)


def test_invalid_kernels():
    with pytest.raises(ValueError, match="sum"):
        MarkovTreeModel(0, {(): {(1, 0): 0.5}}, 3)
    with pytest.raises(ValueError, match="no row"):
        MarkovTreeModel(1, {((1, 0),): {(2, 0): 1.0}}, 3)
    with pytest.raises(ValueError, match="child count"):
        MarkovTreeModel(0, {(): {(3, 0): 1.0}}, 3)


def test_transitive_degree_bound_enforced():
    with pytest.raises(ValueError, match="degree"):
        TransitiveGraphSpec("cayley-integers", 3, generators=(1, 2))


# --- AGW --------------------------------------------------------------------------


def test_single_child_law_gives_a_path():
    oracle = agw_oracle(OffspringLaw((1.0,), 2), 4)
    b = ball(oracle, oracle.root, 6)
    assert all(len(oracle.neighbors(v)) == 2 for v, _ in b.vertices)


def test_root_degree_law_is_shifted():
    assert FAIR.root_law() == {2: 0.5, 3: 0.5}
    hist = Counter(len(agw_oracle(FAIR, s).neighbors(agw_oracle(FAIR, s).root)) for s in range(10_000))
    assert abs(hist[2] / 10_000 - 0.5) <= 0.02
    assert abs(hist[3] / 10_000 - 0.5) <= 0.02


def test_non_root_child_counts_follow_law():
    law = OffspringLaw((0.2, 0.3, 0.5), 4)
    counts = Counter()
    for s in range(10_000):
        o = agw_oracle(law, s)
        counts[len(o.children(o.children(o.root)[0]))] += 1
    for j, p in enumerate(law.probs, 1):
        assert abs(counts[j] / 10_000 - p) <= 0.02


def test_marks_follow_mark_law():
    law = OffspringLaw((1.0,), 2, (0.25, 0.75))
    o = agw_oracle(law, 9)
    b = ball(o, o.root, 2000)
    freq = sum(m for _, m in b.vertices) / len(b)
    assert abs(freq - 0.75) < 0.04


def test_query_order_independence():
    a, b = agw_oracle(FAIR, 77), agw_oracle(FAIR, 77)
    ball_a = ball(a, a.root, 5)
    # breadth-first in a, depth-first along the last child in b
    v = b.root
    for _ in range(5):
        v = b.children(v)[-1]
    ball_b = ball(b, b.root, 5)
    assert ball_a == ball_b


def test_leafless_and_tree_shaped():
    o = agw_oracle(OffspringLaw((0.3, 0.3, 0.4), 4), 5)
    b = ball(o, o.root, 6)
    assert len(b.edges) == len(b) - 1
    assert all(len(o.children(v)) >= 1 for v, _ in b.vertices)


def test_unknown_vertex_is_an_oracle_error():
    o = agw_oracle(FAIR, 1)
    with pytest.raises(OracleError):
        o.neighbors(12345)


# --- Markov trees ---------------------------------------------------------------------


def test_order_zero_model_matches_agw():
    law = OffspringLaw((0.3, 0.7), 3)
    mt = MarkovTreeModel.from_offspring(law)
    reps = 5000
    a = Counter(len(agw_oracle(law, s).neighbors(agw_oracle(law, s).root)) for s in range(reps))
    b = Counter(len(markov_tree_oracle(mt, s).neighbors(markov_tree_oracle(mt, s).root)) for s in range(reps))
    for d in (2, 3):
        assert abs(a[d] - b[d]) / reps < 0.03


def test_alternating_kernel_alternates():
    series = walk_down(markov_tree_oracle(ALTERNATING, 3), 50, 1)
    counts = [c for c, _ in series.pairs[1:]]
    assert all(x != y for x, y in zip(counts, counts[1:]))


def test_sticky_kernel_transitions():
    series = walk_down(markov_tree_oracle(STICKY, 11), 100_001, 5)
    counts = [c for c, _ in series.pairs[1:]]
    trans = Counter(zip(counts, counts[1:]))
    for prev in (1, 2):
        total = trans[(prev, 1)] + trans[(prev, 2)]
        expected = STICKY.kernel[((prev, 0),)][(2, 0)]
        assert abs(trans[(prev, 2)] / total - expected) <= 0.01


def test_stationary_contexts_solve_balance_equations():
    model = MarkovTreeModel(
        1, {((1, 0),): {(1, 0): 0.7, (2, 0): 0.3}, ((2, 0),): {(1, 0): 0.6, (2, 0): 0.4}}, 3
    )
    pi = model.stationary_contexts()
    # two-state chain: pi(2) = P(1->2) / (P(1->2) + P(2->1))
    assert pi[((2, 0),)] == pytest.approx(0.3 / 0.9, abs=1e-9)
    assert sum(pi.values()) == pytest.approx(1.0)
    assert STICKY.stationary_contexts()[((1, 0),)] == pytest.approx(0.5, abs=1e-9)


def test_root_context_follows_stationary_law():
    model = MarkovTreeModel(
        1, {((1, 0),): {(1, 0): 0.7, (2, 0): 0.3}, ((2, 0),): {(1, 0): 0.6, (2, 0): 0.4}}, 3
    )
    # the root's drawn child count is 2 with probability sum_ctx pi(ctx) P(2 | ctx)
    expected = (0.6 / 0.9) * 0.3 + (0.3 / 0.9) * 0.4
    reps = 10_000
    hits = sum(markov_tree_oracle(model, s).symbol(markov_tree_oracle(model, s).root)[0] == 2
               for s in range(reps))
    assert abs(hits / reps - expected) < 0.02


# --- transitive families --------------------------------------------------------------


def test_cayley_path_and_triangles():
    path = transitive_oracle(TransitiveGraphSpec("cayley-integers", 2, generators=(1,)))
    assert all(len(path.neighbors(v)) == 2 for v in range(-5, 6))
    tri = transitive_oracle(TransitiveGraphSpec("cayley-integers", 4, generators=(1, 2)))
    for v in range(-5, 6):
        nb = tri.neighbors(v)
        assert len(nb) == 4
        assert any(w in tri.neighbors(u) for u, w in itertools.combinations(nb, 2))


def test_regular_tree_has_no_cycles():
    o = transitive_oracle(TransitiveGraphSpec("regular-tree", 3, degree=3), 2)
    b = ball(o, o.root, 5)
    assert len(b.edges) == len(b) - 1
    assert all(len(o.neighbors(v)) == 3 for v, _ in b.vertices)


def test_grid_degree():
    o = transitive_oracle(TransitiveGraphSpec("grid", 6, dimension=3))
    b = ball(o, o.root, 2)
    assert len(b) == 25  # octahedral ball of radius 2 in Z^3
    assert all(len(o.neighbors(v)) == 6 for v, _ in b.vertices)


def test_model_summary_lists_root_law():
    s = model_summary(FAIR)
    assert s["degree_bound"] == 3 and s["alphabet_size"] == 1
    assert s["root_children_law"] == {"2": 0.5, "3": 0.5}


# --- re-root diagnostic -------------------------------------------------------------------


@pytest.mark.parametrize("model", [
    FAIR,
    TransitiveGraphSpec("cayley-integers", 4, generators=(1, 2), mark_pattern=(0, 1, 1), alphabet_size=2),
])
def test_reroot_invariance(model):
    tv = reroot_divergence(lambda s: build_oracle(model, s), 50, 10_000, 3, BasisRegistry())
    assert tv <= 0.02
