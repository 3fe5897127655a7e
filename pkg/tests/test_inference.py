import itertools
import math
from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgstat.basis import BasisRegistry
from rgstat.errors import IncompatibleMeasuresError, NotATreeError
from rgstat.generators import (
    MarkovTreeModel,
    OffspringLaw,
    TransitiveGraphSpec,
    agw_oracle,
    build_oracle,
    markov_tree_oracle,
    transitive_oracle,
)
from rgstat.graph import RootedPatch
from rgstat.inference import (
    ForbiddenSet,
    MarkovOrderRunner,
    TestVerdict,
    WalkDownSeries,
    ZeroFrequencyRunner,
    builtin_forbidden,
    consistency_harness,
    default_j_max,
    entropy_profile,
    kt_log_probability,
    markov_order_test,
    ml_log_likelihood,
    walk_down,
    zero_frequency_test,
)
from rgstat.sampling import RadiusSchedule, random_walk, sample_region

FAIR = OffspringLaw((0.5, 0.5), 3)
STICKY = MarkovTreeModel(
    1,
    {((1, 0),): {(1, 0): 0.9, (2, 0): 0.1}, ((2, 0),): {(1, 0): 0.1, (2, 0): 0.9}},
    3,
)


def kt_sequential(seq, k, A):
    """Direct transcription of the add-half rule, one step at a time."""
    counts = defaultdict(lambda: [0] * A)
    total = 0.0
    for i, x in enumerate(seq):
        row = counts[tuple(seq[max(0, i - k):i])]
        total += math.log2((row[x] + 0.5) / (sum(row) + A / 2))
        row[x] += 1
    return total


def symbol_lists(max_alphabet=4, max_len=40):
    return st.integers(1, max_alphabet).flatmap(
        lambda a: st.tuples(st.just(a), st.lists(st.integers(0, a - 1), max_size=max_len))
    )


# --- KT and ML -----------------------------------------------------------------------------


def test_kt_examples():
    assert kt_log_probability([], 0, 2) == 0
    assert kt_log_probability([0], 0, 2) == pytest.approx(-1.0)
    assert kt_log_probability([0, 0], 0, 2) == pytest.approx(math.log2(0.5 * 0.75))


@settings(max_examples=300, deadline=None)
@given(data=symbol_lists(), k=st.integers(0, 4))
def test_kt_closed_form_matches_sequential_rule(data, k):
    a, seq = data
    assert kt_log_probability(seq, k, a) == pytest.approx(kt_sequential(seq, k, a), abs=1e-9)


@pytest.mark.parametrize("a, k, n", [(2, 0, 6), (2, 2, 6), (3, 1, 5), (3, 2, 4)])
def test_kt_is_normalized(a, k, n):
    total = math.fsum(2 ** kt_log_probability(s, k, a) for s in itertools.product(range(a), repeat=n))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_kt_large_alphabet_fallback():
    seq = [i % 300 for i in range(1000)]
    assert kt_log_probability(seq, 8, 300) == pytest.approx(kt_sequential(seq, 8, 300), abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(data=symbol_lists(), k=st.integers(0, 3))
def test_ml_dominates_kt(data, k):
    a, seq = data
    assert ml_log_likelihood(seq, k, a) >= kt_log_probability(seq, k, a) - 1e-9


@settings(max_examples=200, deadline=None)
@given(seq=st.lists(st.integers(0, 1), max_size=40), p=st.floats(0.01, 0.99), q=st.floats(0.01, 0.99))
def test_ml_dominates_every_order1_source(seq, p, q):
    # P(1 | 0) = p, P(1 | 1) = q, and any law for the first symbol (probability <= 1)
    logp = 0.0
    for x, y in zip(seq, seq[1:]):
        r = p if x == 0 else q
        logp += math.log2(r if y == 1 else 1 - r)
    assert ml_log_likelihood(seq, 1, 2) >= logp - 1e-9


def test_series_accepted_directly():
    series = walk_down(agw_oracle(FAIR, 1), 101, 2)
    assert kt_log_probability(series, 1) == kt_log_probability(series.symbols(), 1, 2)


# --- Markov-order test -------------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(seq=st.lists(st.integers(0, 2), min_size=1, max_size=60), k=st.integers(0, 2))
def test_mixture_dominance_and_boundary(seq, k):
    v = markov_order_test(seq, k, 0.5, alphabet_size=3, null="kt")
    mixture = v.statistic + kt_log_probability(seq, k, 3)
    for j in range(v.params["j_max"] + 1):
        assert mixture >= kt_log_probability(seq, j, 3) - (j + 1) - 1e-9
    assert v.statistic >= -(k + 1) - 1e-9
    ml = markov_order_test(seq, k, 0.5, alphabet_size=3)
    assert ml.statistic <= v.statistic + 1e-9  # the ML baseline is never below KT


def test_threshold_and_decision():
    series = walk_down(markov_tree_oracle(STICKY, 2), 2001, 3)
    v = markov_order_test(series, 0, 0.05)
    assert v.decision == "reject_H0" and v.rejected
    assert v.params["threshold"] == pytest.approx(math.log2(20))
    assert v.n == 2000 and v.alpha == 0.05
    assert markov_order_test(series, 1, 0.05).decision == "accept_H0"


def test_decision_is_deterministic():
    series = walk_down(agw_oracle(FAIR, 4), 3001, 5)
    assert markov_order_test(series, 0, 0.1) == markov_order_test(series, 0, 0.1)


@pytest.mark.parametrize("kwargs", [dict(alpha=0.0), dict(alpha=1.0), dict(j_max=0), dict(null="bic")])
def test_markov_order_argument_errors(kwargs):
    args = dict(alpha=0.05)
    args.update(kwargs)
    with pytest.raises(ValueError):
        markov_order_test([0, 1, 0, 1], 0, alphabet_size=2, **args)


def test_default_j_max():
    assert default_j_max(10**4) == 8
    assert default_j_max(20) == 4
    assert default_j_max(1, order=3) == 4


def test_type1_below_level_order0():
    runner = MarkovOrderRunner(0, 0.05)
    rate = sum(runner(FAIR, 2000, s).rejected for s in range(200)) / 200
    assert rate <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 200)


# --- walk-down ---------------------------------------------------------------------------------


def test_walk_down_single_child_tree():
    series = walk_down(agw_oracle(OffspringLaw((1.0,), 2), 3), 20, 1)
    assert series.pairs[0] == (2, 0)  # the root carries the extra child
    assert set(series.pairs[1:]) == {(1, 0)}


def test_walk_down_iid_counts():
    series = walk_down(agw_oracle(FAIR, 8), 100_001, 3)
    ones = sum(c == 1 for c, _ in series.pairs[1:])
    assert abs(ones / 100_000 - 0.5) <= 0.01


def test_walk_down_rejects_cycles():
    with pytest.raises(NotATreeError):
        walk_down(transitive_oracle(TransitiveGraphSpec("cayley-integers", 4, generators=(1, 2))), 10, 0)
    with pytest.raises(NotATreeError):
        walk_down(transitive_oracle(TransitiveGraphSpec("grid", 4, dimension=2)), 10, 0)


def test_symbols_flatten_pairs_and_check_bounds():
    series = WalkDownSeries(((3, 1), (1, 0), (2, 1), (1, 1)), 3, 2)
    assert series.symbol_alphabet == 4
    assert series.symbols() == [0, 3, 1]
    with pytest.raises(ValueError, match="position 1"):
        series.symbols(drop=0)


# --- entropy profile ------------------------------------------------------------------------------


def test_constant_series_has_zero_entropy():
    prof = entropy_profile([1] * 500, 3, alphabet_size=2)
    assert prof.estimates == (0.0, 0.0, 0.0, 0.0)


def test_iid_fair_entropy_is_one_bit():
    series = walk_down(agw_oracle(FAIR, 2), 100_001, 7)
    assert abs(entropy_profile(series, 2).estimates[0] - 1.0) <= 0.02


def test_sticky_entropy_profile():
    series = walk_down(markov_tree_oracle(STICKY, 5), 100_001, 6)
    h = entropy_profile(series, 5).estimates
    binary = -(0.9 * math.log2(0.9) + 0.1 * math.log2(0.1))
    assert abs(h[1] - binary) <= 0.02
    assert h[0] > h[1] + 0.3
    assert all(b <= a + 0.02 for a, b in zip(h, h[1:]))


@settings(max_examples=100, deadline=None)
@given(data=symbol_lists(max_len=80), K=st.integers(0, 4))
def test_profile_bounds_and_exact_monotonicity(data, K):
    a, seq = data
    prof = entropy_profile(seq, K, alphabet_size=a)
    assert all(0 <= h <= math.log2(a) + 1e-12 for h in prof.estimates)
    # all orders share the same positions, so conditioning can only lower the estimate
    assert all(b <= a_ + 1e-9 for a_, b in zip(prof.estimates, prof.estimates[1:]))


def test_low_confidence_flag():
    assert entropy_profile([0, 1] * 20, 4, alphabet_size=2).low_confidence
    assert not entropy_profile([0, 1] * 500, 2, alphabet_size=2).low_confidence


# --- zero-frequency test ---------------------------------------------------------------------------


def triangle_set(M, A, registry):
    return ForbiddenSet.from_patches(builtin_forbidden("radius1-triangles", M, A), registry)


def test_builtin_triangles_all_have_cycles():
    pats = builtin_forbidden("radius1-triangles", 3, 1)
    # two neighbours joined, or three neighbours with 1, 2 or 3 edges among them
    assert len(pats) == 4
    with pytest.raises(ValueError):
        builtin_forbidden("everything", 3, 1)


def test_tree_never_rejects():
    reg = BasisRegistry()
    forbidden = triangle_set(3, 1, reg)
    for seed in range(30):
        o = agw_oracle(FAIR, seed)
        region = sample_region(o, random_walk(o, o.root, 300, seed), RadiusSchedule(), max_radius=2)
        v = zero_frequency_test(region, forbidden, reg)
        assert v.decision == "accept_H0" and v.statistic == -1


def test_cayley_triangles_reject_at_first_position():
    spec = TransitiveGraphSpec("cayley-integers", 4, generators=(1, 2))
    reg = BasisRegistry()
    forbidden = triangle_set(4, 1, reg)
    o = transitive_oracle(spec, 3)
    region = sample_region(o, random_walk(o, o.root, 10, 1), RadiusSchedule())
    v = zero_frequency_test(region, forbidden, reg)
    assert v.rejected and v.statistic == 1.0 and v.alpha is None


def test_forbidden_deeper_than_region_is_an_error():
    reg = BasisRegistry()
    square = RootedPatch.build({i: 0 for i in range(4)}, [(0, 1), (1, 2), (2, 3), (0, 3)], 0, 3, 1, [2])
    forbidden = ForbiddenSet.from_patches([square], reg)
    assert forbidden.max_radius == 2
    o = agw_oracle(FAIR, 0)
    region = sample_region(o, random_walk(o, o.root, 5, 0), RadiusSchedule(), max_radius=1)
    with pytest.raises(ValueError, match="deeper"):
        zero_frequency_test(region, forbidden, reg)


def test_empty_forbidden_set_rejected():
    with pytest.raises(ValueError):
        ForbiddenSet(())


def test_runner_checks_patch_shape():
    runner = ZeroFrequencyRunner(builtin_forbidden("radius1-triangles", 3, 1))
    with pytest.raises(IncompatibleMeasuresError):
        runner(OffspringLaw((0.5, 0.3, 0.2), 4), 10, 0)


# --- harness -------------------------------------------------------------------------------------------


def test_zero_frequency_harness():
    runner = ZeroFrequencyRunner(builtin=("radius1-triangles",), max_radius=1)
    report = consistency_harness(
        runner,
        {"agw": OffspringLaw((0.4, 0.3, 0.3), 4)},
        {"cayley": TransitiveGraphSpec("cayley-integers", 4, generators=(1, 2))},
        [10, 100], runs=20, seed=1,
    )
    assert report.rates("h0", "agw") == {10: 0.0, 100: 0.0}
    assert report.rates("h1", "cayley") == {10: 0.0, 100: 0.0}
    assert report.type2_non_increasing("cayley")
    assert len(report.verdicts) == 80 and len(report.wall_times) == 80


def test_markov_harness_rates_and_worker_independence():
    runner = MarkovOrderRunner(0, 0.05)
    args = ({"iid": FAIR}, {"sticky": STICKY}, [50, 500], 30, 4)
    one = consistency_harness(runner, *args, workers=1)
    two = consistency_harness(runner, *args, workers=2)
    assert one.cells == two.cells and one.verdicts == two.verdicts
    for cell in one.cells:
        if cell.hypothesis == "h0":
            assert cell.error_rate <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / cell.runs)
    assert one.rates("h1", "sticky")[500] == 0.0
    summary = one.summary()
    assert summary["test"] == "markov-order" and "sticky" in summary["type2_trend"]


def test_harness_requires_runs():
    with pytest.raises(ValueError):
        consistency_harness(MarkovOrderRunner(0, 0.05), {"iid": FAIR}, {}, [10], 0)


def test_verdict_record_is_plain_json():
    import json

    v = TestVerdict("x", "accept_H0", 0.1, 1.5, 10, 3, {"a": 1})
    assert json.loads(json.dumps(v.to_record()))["params"] == {"a": 1}
