"""Random-walk sampling, empirical ball-class frequencies and the distributional distance."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from rgstat._hashing import derive_seed
from rgstat.basis import BasisRegistry
from rgstat.errors import BudgetExceededError, IncompatibleMeasuresError, OracleError
from rgstat.graph import (
    DEFAULT_CANON_BUDGET,
    CanonicalCode,
    GraphOracle,
    RootedPatch,
    ball_edges,
    ball_layout,
    encode_indexed,
)

DEFAULT_REGION_BUDGET = 250_000
Z95 = 1.959963984540054


@dataclass(frozen=True)
class RadiusSchedule:
    """Non-decreasing, unbounded radius schedule ``k(n)``.

    ``log2``:   k(n) = offset + ceil(scale * log2(n + 1))
    ``loglog``: k(n) = offset + ceil(log2(log2(n + 1)))
    """

    kind: str = "log2"
    scale: float = 1.0
    offset: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("log2", "loglog"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("schedule scale must be positive")
        if self.offset < 0:
            raise ValueError("schedule offset must be >= 0")

    def __call__(self, n: int) -> int:
        if n < 1:
            raise ValueError("schedule is defined for n >= 1")
        if self.kind == "log2":
            # round before ceil so exact powers of two are not bumped by float noise
            return self.offset + math.ceil(round(self.scale * math.log2(n + 1), 9))
        return self.offset + math.ceil(round(math.log2(math.log2(n + 1)), 9))

    @property
    def tag(self) -> str:
        if self.kind == "log2":
            return f"log2(scale={self.scale:g},offset={self.offset})"
        return f"loglog(offset={self.offset})"


@dataclass(frozen=True)
class WalkTrace:
    vertices: tuple[int, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def root(self) -> int:
        return self.vertices[0]

    def prefix(self, n: int) -> WalkTrace:
        if not 1 <= n <= len(self.vertices):
            raise ValueError(f"prefix length {n} outside [1, {len(self.vertices)}]")
        return WalkTrace(self.vertices[:n], self.seed)


def random_walk(oracle: GraphOracle, root: int, n: int, seed: int) -> WalkTrace:
    """Simple random walk ``O_1 = root, ..., O_n``; each step picks a uniform neighbour."""
    if n < 1:
        raise ValueError("walk length must be >= 1")
    steps = np.random.default_rng(seed).random(n - 1).tolist()
    nbrs = oracle.neighbors
    v = root
    out = [root]
    append = out.append
    for u in steps:
        nb = nbrs(v)
        if not nb:
            raise OracleError(f"vertex {v} has no neighbours; the walk cannot continue")
        v = nb[int(u * len(nb))]
        append(v)
    return WalkTrace(tuple(out), seed)


@dataclass(frozen=True)
class SampleRegion:
    """Union of radius-``radius`` balls around every walk vertex, with the walk."""

    patch: RootedPatch
    trace: WalkTrace
    radius: int


def sample_region(
    oracle: GraphOracle,
    trace: WalkTrace,
    schedule: RadiusSchedule,
    budget: int = DEFAULT_REGION_BUDGET,
    max_radius: int | None = None,
) -> SampleRegion:
    """Union of balls of radius ``min(k(N), max_radius)`` around the walk, as a patch."""
    k = schedule(len(trace))
    if max_radius is not None:
        k = min(k, max_radius)
    dist = dict.fromkeys(trace.vertices, 0)
    frontier = list(dist)
    nbrs = oracle.neighbors
    for depth in range(1, k + 1):
        nxt = []
        for u in frontier:
            for w in nbrs(u):
                if w not in dist:
                    dist[w] = depth
                    nxt.append(w)
        if len(dist) > budget:
            raise BudgetExceededError(
                f"sample region at radius {depth} has {len(dist)} vertices, budget is {budget}",
                radius=depth,
                size=len(dist),
            )
        frontier = nxt
    edges = set()
    for u, d in dist.items():
        if d == k and oracle.acyclic:
            continue
        for w in nbrs(u):
            if w in dist:
                edges.add((u, w) if u < w else (w, u))
    mark = oracle.mark
    patch = RootedPatch.build(
        {v: mark(v) for v in dist},
        edges,
        trace.root,
        oracle.degree_bound,
        oracle.alphabet_size,
        (v for v, d in dist.items() if d == k),
    )
    return SampleRegion(patch, trace, k)


class BallClassifier:
    """Canonical codes of the balls ``B(v, 0..r)`` for vertices of one oracle.

    Results are memoized per vertex, and per labelled layout in the registry,
    so revisits and repeated local shapes skip canonicalization.
    """

    def __init__(self, oracle: GraphOracle, registry: BasisRegistry,
                 budget: int = DEFAULT_CANON_BUDGET):
        self.oracle = oracle
        self.registry = registry
        self.budget = budget
        self._by_vertex: dict[int, list[CanonicalCode]] = {}
        self._layouts = registry.layout_cache(oracle.degree_bound, oracle.alphabet_size)

    def codes(self, v: int, r: int) -> list[CanonicalCode]:
        """Codes of ``B(v, 0), ..., B(v, r)``; raises BudgetExceededError with the failing radius."""
        hit = self._by_vertex.get(v)
        if hit is not None and len(hit) > r:
            return hit
        oracle = self.oracle
        order, index, starts = ball_layout(oracle, v, r, self.budget)
        edges = ball_edges(oracle, order, index, starts[r])
        mark = oracle.mark
        marks = tuple([mark(w) for w in order])
        layouts = self._layouts
        out = []
        for d in range(r + 1):
            size = starts[d + 1]
            if size == len(order):
                sub_edges = tuple(edges)
                sub_marks = marks
            else:
                sub_edges = tuple([e for e in edges if e[1] < size])
                sub_marks = marks[:size]
            key = (sub_marks, sub_edges)
            code = layouts.get(key)
            if code is None:
                nbrs: list[list[int]] = [[] for _ in range(size)]
                for i, j in sub_edges:
                    nbrs[i].append(j)
                    nbrs[j].append(i)
                code = encode_indexed(nbrs, sub_marks, oracle.degree_bound, oracle.alphabet_size, 0)
                radius = max(x for x in range(d + 1) if starts[x + 1] > starts[x])
                self.registry.register(code, radius)
                layouts[key] = code
            out.append(code)
        self._by_vertex[v] = out
        return out

    def code(self, v: int, r: int) -> CanonicalCode:
        return self.codes(v, r)[r]


@dataclass(frozen=True)
class BallMeasure:
    """Class frequencies ``counts[code] / total`` for every radius up to ``radius_cap``."""

    counts: Mapping[CanonicalCode, int]
    radii: Mapping[CanonicalCode, int]
    total: int
    radius_cap: int
    degree_bound: int
    alphabet_size: int

    def frequency(self, code: CanonicalCode) -> float:
        return self.counts.get(code, 0) / self.total

    def support(self) -> list[CanonicalCode]:
        return sorted(self.counts, key=lambda c: (self.radii[c], c.hex()))

    def radius_counts(self, r: int) -> dict[CanonicalCode, int]:
        return {c: n for c, n in self.counts.items() if self.radii[c] == r}


@dataclass(frozen=True)
class EmpiricalMeasure(BallMeasure):
    """Frequencies of ball classes along a walk of length ``total``.

    ``schedule_radius`` is k(N); ``radius_cap`` is what was actually
    classified after a requested cap and the canonicalization budget.
    """

    schedule: str = ""
    schedule_radius: int = 0
    budget_limited: bool = False
    seed: int = 0

    @property
    def N(self) -> int:
        return self.total

    def dump(self) -> str:
        return "".join(
            f"{c.hex()} {self.radii[c]} {self.counts[c]} {self.total}\n" for c in self.support()
        )


@dataclass(frozen=True)
class ModelMeasure(BallMeasure):
    """Monte Carlo estimate of root-ball class probabilities from independent draws."""

    replicates: int = 0
    seed: int = 0

    def ci_half_width(self, code: CanonicalCode) -> float:
        p = self.frequency(code)
        return Z95 * math.sqrt(p * (1.0 - p) / self.total)

    def dump(self) -> str:
        return "".join(
            f"{c.hex()} {self.radii[c]} {self.counts[c]} {self.total} {self.ci_half_width(c)!r}\n"
            for c in self.support()
        )


def empirical_measure(
    oracle: GraphOracle,
    trace: WalkTrace,
    schedule: RadiusSchedule,
    registry: BasisRegistry,
    max_radius: int | None = None,
    budget: int = DEFAULT_CANON_BUDGET,
    classifier: BallClassifier | None = None,
) -> EmpiricalMeasure:
    """Ball-class frequencies over the walk positions, for radii ``0..min(k(N), max_radius)``.

    If some ball exceeds the canonicalization budget the radius cap drops to
    the largest radius every position could be classified at, and the
    measure is flagged ``budget_limited``.
    """
    if classifier is None:
        classifier = BallClassifier(oracle, registry, budget)
    n = len(trace)
    k = schedule(n)
    cap = k if max_radius is None else min(k, max_radius)
    limited = False
    per_position = []
    codes_of = classifier.codes
    for v in trace.vertices:
        try:
            codes = codes_of(v, cap)
        except BudgetExceededError as exc:
            cap = exc.radius - 1
            limited = True
            if cap < 0:  # pragma: no cover - a single vertex always fits
                raise
            codes = codes_of(v, cap)
        per_position.append(codes)
    counts: Counter = Counter()
    for codes in per_position:
        counts.update(codes[: cap + 1])
    radii = {c: registry.get(c).radius for c in counts}
    return EmpiricalMeasure(
        counts=dict(counts),
        radii=radii,
        total=n,
        radius_cap=cap,
        degree_bound=oracle.degree_bound,
        alphabet_size=oracle.alphabet_size,
        schedule=schedule.tag,
        schedule_radius=k,
        budget_limited=limited,
        seed=trace.seed,
    )


def model_measure(
    factory: Callable[[int], GraphOracle],
    radius_cap: int,
    replicates: int,
    seed: int,
    registry: BasisRegistry,
    budget: int = DEFAULT_CANON_BUDGET,
) -> ModelMeasure:
    """Root-ball class frequencies over ``replicates`` independent oracles ``factory(seed_i)``."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    counts: Counter = Counter()
    degree_bound = alphabet_size = None
    for i in range(replicates):
        oracle = factory(derive_seed(seed, i))
        degree_bound, alphabet_size = oracle.degree_bound, oracle.alphabet_size
        counts.update(BallClassifier(oracle, registry, budget).codes(oracle.root, radius_cap))
    radii = {c: registry.get(c).radius for c in counts}
    return ModelMeasure(
        counts=dict(counts),
        radii=radii,
        total=replicates,
        radius_cap=radius_cap,
        degree_bound=degree_bound,
        alphabet_size=alphabet_size,
        replicates=replicates,
        seed=seed,
    )


def empirical_distance(a: BallMeasure, b: BallMeasure, max_radius: int | None = None) -> float:
    """Sum of ``2**-len(code) * |a(F) - b(F)|`` over the union of both supports."""
    if (a.degree_bound, a.alphabet_size) != (b.degree_bound, b.alphabet_size):
        raise IncompatibleMeasuresError(
            f"measures built for (M={a.degree_bound}, |X|={a.alphabet_size}) and "
            f"(M={b.degree_bound}, |X|={b.alphabet_size})"
        )
    terms = []
    for code in set(a.counts) | set(b.counts):
        r = a.radii.get(code, b.radii.get(code))
        if max_radius is not None and r > max_radius:
            continue
        diff = abs(a.counts.get(code, 0) / a.total - b.counts.get(code, 0) / b.total)
        terms.append(math.ldexp(diff, -code.nbits))
    return math.fsum(terms)


def reroot_divergence(
    factory: Callable[[int], GraphOracle],
    step: int,
    draws: int,
    seed: int,
    registry: BasisRegistry,
    radius: int = 1,
) -> float:
    """Total variation between radius-``radius`` class laws at walk steps 1 and ``step``.

    Each draw builds a fresh oracle and walk; a stationary model gives a
    divergence that shrinks like ``draws ** -0.5``.
    """
    first: Counter = Counter()
    later: Counter = Counter()
    for i in range(draws):
        oracle = factory(derive_seed(seed, i, 0))
        trace = random_walk(oracle, oracle.root, step, derive_seed(seed, i, 1))
        clf = BallClassifier(oracle, registry)
        first[clf.code(trace.vertices[0], radius)] += 1
        later[clf.code(trace.vertices[-1], radius)] += 1
    keys = set(first) | set(later)
    return 0.5 * sum(abs(first[c] - later[c]) for c in keys) / draws


def distance_curve(
    oracle: GraphOracle,
    trace: WalkTrace,
    checkpoints: Sequence[int],
    reference: BallMeasure,
    schedule: RadiusSchedule,
    registry: BasisRegistry,
    max_radius: int | None = None,
    budget: int = DEFAULT_CANON_BUDGET,
) -> list[tuple[EmpiricalMeasure, float]]:
    """Empirical measure and its distance to ``reference`` at each walk-prefix length."""
    clf = BallClassifier(oracle, registry, budget)
    out = []
    for n in checkpoints:
        m = empirical_measure(oracle, trace.prefix(n), schedule, registry, max_radius, budget, clf)
        out.append((m, empirical_distance(m, reference)))
    return out
