"""Consistent tests on sampled networks and the Type I/II measurement harness.

Two constructive tests live here:

* the zero-frequency test, which rejects as soon as a forbidden ball class
  is observed at some walk position (exactly zero Type I error), and
* the Markov-order test for trees, applied to the walk-down series of
  (child count, mark) symbols: a universal mixture of Krichevsky-Trofimov
  estimators over orders ``0..J`` is compared with the best order-``k``
  explanation of the data.
"""
from __future__ import annotations

import math
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from rgstat._hashing import derive_seed
from rgstat.basis import BallClass, BasisRegistry, enumerate_radius1_patches, has_cycle
from rgstat.errors import IncompatibleMeasuresError, NotATreeError
from rgstat.generators import Model, build_oracle
from rgstat.graph import DEFAULT_CANON_BUDGET, GraphOracle, PatchOracle, RootedPatch
from rgstat.sampling import (
    DEFAULT_REGION_BUDGET,
    BallClassifier,
    RadiusSchedule,
    SampleRegion,
    random_walk,
    sample_region,
)

ACCEPT = "accept_H0"
REJECT = "reject_H0"
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class TestVerdict:
    __test__ = False  # keep pytest from collecting this as a test class

    test: str
    decision: str
    alpha: float | None
    statistic: float
    n: int
    seed: int | None = None
    params: Mapping[str, object] = field(default_factory=dict)

    @property
    def rejected(self) -> bool:
        return self.decision == REJECT

    def to_record(self) -> dict:
        return {
            "test": self.test,
            "decision": self.decision,
            "alpha": self.alpha,
            "statistic": self.statistic,
            "n": self.n,
            "seed": self.seed,
            "params": dict(self.params),
        }


# ---------------------------------------------------------------------------
# Zero-frequency (forbidden subgraph) test


@dataclass(frozen=True)
class ForbiddenSet:
    """Finite set of ball classes assumed to have probability zero under H0."""

    classes: tuple[BallClass, ...]

    def __post_init__(self) -> None:
        if not self.classes:
            raise ValueError("forbidden set must not be empty")

    @classmethod
    def from_patches(
        cls, patches: Iterable[RootedPatch], registry: BasisRegistry,
        budget: int = DEFAULT_CANON_BUDGET,
    ) -> ForbiddenSet:
        seen: dict = {}
        for p in patches:
            c = registry.classify(p, budget)
            seen.setdefault(c.code, c)
        return cls(tuple(seen.values()))

    @property
    def max_radius(self) -> int:
        return max(c.radius for c in self.classes)


BUILTIN_FORBIDDEN = ("radius1-triangles",)


def builtin_forbidden(name: str, degree_bound: int, alphabet_size: int) -> list[RootedPatch]:
    """Named forbidden families; ``radius1-triangles`` is every radius-1 ball with a triangle."""
    if name == "radius1-triangles":
        return [p for p in enumerate_radius1_patches(degree_bound, alphabet_size) if has_cycle(p)]
    raise ValueError(f"unknown builtin forbidden set {name!r}; known: {', '.join(BUILTIN_FORBIDDEN)}")


def zero_frequency_test(
    region: SampleRegion,
    forbidden: ForbiddenSet,
    registry: BasisRegistry,
    budget: int = DEFAULT_CANON_BUDGET,
) -> TestVerdict:
    """Reject iff the ball of some walk position falls in a forbidden class.

    The statistic is the 1-based position of the first hit, or -1.  The level
    is irrelevant: a class of probability zero is never observed under H0.
    """
    if forbidden.max_radius > region.radius:
        raise ValueError(
            f"forbidden class of radius {forbidden.max_radius} is deeper than the "
            f"sampled radius {region.radius}"
        )
    wanted = {c.code for c in forbidden.classes}
    radii = sorted({c.radius for c in forbidden.classes})
    top = radii[-1]
    clf = BallClassifier(PatchOracle(region.patch), registry, budget)
    hit = -1
    for i, v in enumerate(region.trace.vertices, 1):
        codes = clf.codes(v, top)
        if any(codes[r] in wanted for r in radii):
            hit = i
            break
    return TestVerdict(
        test="zero-frequency",
        decision=REJECT if hit > 0 else ACCEPT,
        alpha=None,
        statistic=float(hit),
        n=len(region.trace),
        seed=region.trace.seed,
        params={"forbidden": [c.code.hex() for c in forbidden.classes], "radius": region.radius},
    )


# ---------------------------------------------------------------------------
# Walk-down series


@dataclass(frozen=True)
class WalkDownSeries:
    """(child count, mark) of v_1 = root, v_2, ... along a walk that only moves to children."""

    pairs: tuple[tuple[int, int], ...]
    degree_bound: int
    alphabet_size: int
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def symbol_alphabet(self) -> int:
        return (self.degree_bound - 1) * self.alphabet_size

    def symbols(self, drop: int = 1) -> list[int]:
        """Flatten pairs to ``(c - 1) * |marks| + m``, skipping the first ``drop`` entries.

        The root's child count follows the shifted root law and may equal the
        degree bound, which has no symbol; dropping it is the default.
        """
        out = []
        top = self.degree_bound - 1
        a = self.alphabet_size
        for pos, (c, m) in enumerate(self.pairs[drop:], drop + 1):
            if not 1 <= c <= top:
                raise ValueError(
                    f"walk-down position {pos} has {c} children, outside [1, {top}]; "
                    "drop the root symbol"
                )
            out.append((c - 1) * a + m)
        return out


def walk_down(oracle: GraphOracle, n: int, seed: int) -> WalkDownSeries:
    """Walk from the root to a uniformly chosen child, ``n`` vertices in total.

    Children of ``v`` are its neighbours other than the vertex the walk came
    from.  A child that was already discovered means the graph has a cycle
    inside the explored region, and raises :class:`NotATreeError`.
    """
    if n < 0:
        raise ValueError("series length must be >= 0")
    steps = np.random.default_rng(seed).random(max(n - 1, 0)).tolist()
    v, prev = oracle.root, None
    seen = {v}
    pairs = []
    for i in range(n):
        kids = [w for w in oracle.neighbors(v) if w != prev]
        for w in kids:
            if w in seen:
                raise NotATreeError(f"vertex {w} reached twice below the root; not a tree")
        seen.update(kids)
        if not kids:
            raise NotATreeError(f"vertex {v} has no children; walk-down needs a leafless tree")
        pairs.append((len(kids), oracle.mark(v)))
        if i < n - 1:
            prev, v = v, kids[int(steps[i] * len(kids))]
    return WalkDownSeries(tuple(pairs), oracle.degree_bound, oracle.alphabet_size, seed)


# ---------------------------------------------------------------------------
# Sequential estimators


def _counts(symbols: Sequence[int], order: int, alphabet_size: int, start: int | None = None):
    """Counts of (context, symbol) over positions ``i >= start`` (default ``order``).

    Returns ``(key_counts, context_counts)``: arrays of occurrence counts per
    observed (context, symbol) key and per observed context.
    """
    start = order if start is None else start
    s = np.asarray(symbols, dtype=np.int64)
    n = len(s)
    if n <= start:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    if alphabet_size ** (order + 1) < 2 ** 62:
        ctx = np.zeros(n - start, dtype=np.int64)
        for t in range(order, 0, -1):
            ctx = ctx * alphabet_size + s[start - t:n - t]
        key = ctx * alphabet_size + s[start:]
        keys, key_counts = np.unique(key, return_counts=True)
        _, inverse = np.unique(keys // alphabet_size, return_inverse=True)
        ctx_counts = np.bincount(inverse, weights=key_counts).astype(np.int64)
        return key_counts, ctx_counts
    seq = list(symbols)
    pairs = Counter((tuple(seq[i - order:i]), seq[i]) for i in range(start, n))
    ctxs = Counter()
    for (c, _), k in pairs.items():
        ctxs[c] += k
    return np.array(list(pairs.values())), np.array(list(ctxs.values()))


def kt_log_probability(
    series: WalkDownSeries | Sequence[int], order: int,
    alphabet_size: int | None = None, *, drop: int = 1,
) -> float:
    """log2 of the sequential KT probability of a series under an order-``order`` model.

    Each step predicts ``(count(ctx, s) + 1/2) / (count(ctx) + A/2)``.  The
    first ``order`` positions use their shorter prefix as context; each such
    context occurs once, so each contributes exactly ``1/A``.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    symbols, a = _symbols_of(series, alphabet_size, drop)
    head = min(order, len(symbols))
    key_counts, ctx_counts = _counts(symbols, order, a)
    half = math.lgamma(0.5)
    total = sum(math.lgamma(k + 0.5) - half for k in key_counts.tolist())
    total += sum(math.lgamma(a / 2) - math.lgamma(k + a / 2) for k in ctx_counts.tolist())
    return total / _LN2 - head * math.log2(a)


def ml_log_likelihood(
    series: WalkDownSeries | Sequence[int], order: int,
    alphabet_size: int | None = None, *, drop: int = 1,
) -> float:
    """log2 of the maximized order-``order`` likelihood (initial positions have probability 1)."""
    symbols, a = _symbols_of(series, alphabet_size, drop)
    key_counts, ctx_counts = _counts(symbols, order, a)
    kc = key_counts.astype(float)
    cc = ctx_counts.astype(float)
    return float((kc * np.log2(kc)).sum() - (cc * np.log2(cc)).sum())


def _log2_sum_exp2(values: Sequence[float]) -> float:
    top = max(values)
    return top + math.log2(math.fsum(2.0 ** (v - top) for v in values))


def default_j_max(n: int, order: int = 0) -> int:
    j = min(8, int(math.log2(n))) if n >= 1 else 0
    return max(j, order + 1)


def _symbols_of(series, alphabet_size: int | None, drop: int) -> tuple[list[int], int]:
    if isinstance(series, WalkDownSeries):
        return series.symbols(drop), series.symbol_alphabet
    if alphabet_size is None:
        raise ValueError("alphabet_size is required for a raw symbol sequence")
    return list(series), alphabet_size


def markov_order_test(
    series: WalkDownSeries | Sequence[int],
    order: int,
    alpha: float,
    j_max: int | None = None,
    *,
    alphabet_size: int | None = None,
    drop: int = 1,
    null: str = "ml",
) -> TestVerdict:
    """Test H0: the series is Markov of order <= ``order``.

    ``L_mix = log2 sum_j 2^-(j+1) KT_j`` over ``j = 0..j_max``.  The null
    code length is the maximized order-``order`` likelihood (``null="ml"``),
    which dominates every order-``order`` source, so rejecting when
    ``L_mix - L_null > log2(1/alpha)`` has Type I error at most ``alpha``.
    ``null="kt"`` uses ``KT_order`` instead.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if order < 0:
        raise ValueError("order must be >= 0")
    if null not in ("ml", "kt"):
        raise ValueError(f"null must be 'ml' or 'kt', got {null!r}")
    symbols, a = _symbols_of(series, alphabet_size, drop)
    n = len(symbols)
    if j_max is None:
        j_max = default_j_max(n, order)
    elif j_max < order + 1:
        raise ValueError(f"j_max must be >= order + 1 = {order + 1}")
    kt = [kt_log_probability(symbols, j, a) for j in range(j_max + 1)]
    mixture = _log2_sum_exp2([-(j + 1) + kt[j] for j in range(j_max + 1)])
    baseline = kt[order] if null == "kt" else ml_log_likelihood(symbols, order, a)
    stat = mixture - baseline
    threshold = math.log2(1.0 / alpha)
    return TestVerdict(
        test="markov-order",
        decision=REJECT if stat > threshold else ACCEPT,
        alpha=alpha,
        statistic=stat,
        n=n,
        seed=getattr(series, "seed", None),
        params={"order": order, "j_max": j_max, "null": null, "drop": drop,
                "alphabet_size": a, "threshold": threshold},
    )


@dataclass(frozen=True)
class EntropyProfile:
    """Plug-in conditional entropies h_0..h_K in bits, all over positions ``i >= K``."""

    estimates: tuple[float, ...]
    n: int
    n_used: int
    alphabet_size: int
    low_confidence: bool

    def to_record(self) -> dict:
        return {
            "estimates": list(self.estimates),
            "n": self.n,
            "n_used": self.n_used,
            "alphabet_size": self.alphabet_size,
            "low_confidence": self.low_confidence,
        }


def entropy_profile(
    series: WalkDownSeries | Sequence[int],
    max_order: int,
    *,
    alphabet_size: int | None = None,
    drop: int = 1,
) -> EntropyProfile:
    """Empirical entropy of a symbol given its ``k`` predecessors, ``k = 0..max_order``.

    Every order is evaluated on the same positions, so the profile is
    non-increasing.  ``low_confidence`` flags fewer than 10 expected
    observations per order-``max_order`` context.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    symbols, a = _symbols_of(series, alphabet_size, drop)
    n = len(symbols)
    used = max(n - max_order, 0)
    estimates = []
    for k in range(max_order + 1):
        if used == 0:
            estimates.append(0.0)
            continue
        key_counts, ctx_counts = _counts(symbols, k, a, start=max_order)
        kc = key_counts.astype(float)
        cc = ctx_counts.astype(float)
        h = ((cc * np.log2(cc)).sum() - (kc * np.log2(kc)).sum()) / used
        estimates.append(min(max(float(h), 0.0), math.log2(a)))
    return EntropyProfile(
        estimates=tuple(estimates),
        n=n,
        n_used=used,
        alphabet_size=a,
        low_confidence=used < 10 * a ** max_order,
    )


# ---------------------------------------------------------------------------
# Harness


@dataclass(frozen=True)
class ZeroFrequencyRunner:
    """Draw a network, walk ``n`` steps, sample the region and run the zero-frequency test."""

    forbidden: tuple[RootedPatch, ...] = ()
    builtin: tuple[str, ...] = ()
    schedule: RadiusSchedule = RadiusSchedule()
    region_budget: int = DEFAULT_REGION_BUDGET
    canon_budget: int = DEFAULT_CANON_BUDGET
    max_radius: int | None = None
    name: str = "zero-frequency"

    def __call__(self, model: Model, n: int, seed: int) -> TestVerdict:
        oracle = build_oracle(model, derive_seed(seed, 0))
        shape = (oracle.degree_bound, oracle.alphabet_size)
        patches = list(self.forbidden)
        for name in self.builtin:
            patches += builtin_forbidden(name, *shape)
        for p in patches:
            if (p.degree_bound, p.alphabet_size) != shape:
                raise IncompatibleMeasuresError(
                    f"forbidden patch built for (M={p.degree_bound}, |X|={p.alphabet_size}), "
                    f"model has (M={shape[0]}, |X|={shape[1]})"
                )
        trace = random_walk(oracle, oracle.root, n, derive_seed(seed, 1))
        region = sample_region(oracle, trace, self.schedule, self.region_budget, self.max_radius)
        registry = BasisRegistry()
        forbidden = ForbiddenSet.from_patches(patches, registry, self.canon_budget)
        return zero_frequency_test(region, forbidden, registry, self.canon_budget)


@dataclass(frozen=True)
class MarkovOrderRunner:
    """Draw a tree, take an ``n``-symbol walk-down series and run the order test."""

    order: int
    alpha: float
    j_max: int | None = None
    drop: int = 1
    null: str = "ml"
    name: str = "markov-order"

    def __call__(self, model: Model, n: int, seed: int) -> TestVerdict:
        oracle = build_oracle(model, derive_seed(seed, 0))
        series = walk_down(oracle, n + self.drop, derive_seed(seed, 1))
        return markov_order_test(series, self.order, self.alpha, self.j_max,
                                 drop=self.drop, null=self.null)


@dataclass(frozen=True)
class HarnessCell:
    hypothesis: str
    model: str
    n: int
    runs: int
    rejections: int

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.runs

    @property
    def error_rate(self) -> float:
        """Type I rate for H0 cells, Type II rate for H1 cells."""
        r = self.rejection_rate
        return r if self.hypothesis == "h0" else 1.0 - r

    @property
    def sigma(self) -> float:
        p = self.error_rate
        return math.sqrt(p * (1.0 - p) / self.runs)

    def to_record(self) -> dict:
        return {
            "hypothesis": self.hypothesis,
            "model": self.model,
            "n": self.n,
            "runs": self.runs,
            "rejections": self.rejections,
            "error_kind": "type1" if self.hypothesis == "h0" else "type2",
            "error_rate": self.error_rate,
            "sigma": self.sigma,
        }


@dataclass(frozen=True)
class HarnessReport:
    test: str
    cells: tuple[HarnessCell, ...]
    verdicts: tuple[tuple[str, str, int, int, TestVerdict], ...]
    wall_times: tuple[float, ...] = ()

    def rates(self, hypothesis: str, model: str) -> dict[int, float]:
        return {c.n: c.error_rate for c in self.cells
                if c.hypothesis == hypothesis and c.model == model}

    def type2_non_increasing(self, model: str) -> bool:
        """Whether the Type II rate never rises along the N grid (a finite-sample trend only)."""
        rates = [r for _, r in sorted(self.rates("h1", model).items())]
        return all(b <= a for a, b in zip(rates, rates[1:]))

    def summary(self) -> dict:
        return {
            "test": self.test,
            "cells": [c.to_record() for c in self.cells],
            "type2_trend": {
                m: self.type2_non_increasing(m)
                for m in dict.fromkeys(c.model for c in self.cells if c.hypothesis == "h1")
            },
        }


def _run_job(job):
    runner, model, n, seed = job
    start = time.perf_counter()
    verdict = runner(model, n, seed)
    return verdict, time.perf_counter() - start


def consistency_harness(
    runner: Callable[[Model, int, int], TestVerdict],
    h0: Mapping[str, Model],
    h1: Mapping[str, Model],
    n_grid: Sequence[int],
    runs: int,
    seed: int = 0,
    workers: int | None = 1,
) -> HarnessReport:
    """Empirical Type I (under ``h0`` models) and Type II (under ``h1``) rates per N.

    Run ``r`` uses the same network and walk seed at every N, so each row of
    the grid follows one growing sample.  Results are merged in
    (hypothesis, model, N, run) order whatever the worker count.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    jobs, labels = [], []
    for hyp, models in (("h0", h0), ("h1", h1)):
        for name, model in models.items():
            for n in n_grid:
                for r in range(runs):
                    s = derive_seed(seed, r)
                    jobs.append((runner, model, n, s))
                    labels.append((hyp, name, n, r))
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_job(j) for j in jobs]
    wall_times = tuple(t for _, t in results)
    results = [v for v, _ in results]
    tally: dict[tuple[str, str, int], int] = {}
    for (hyp, name, n, _), verdict in zip(labels, results):
        tally[(hyp, name, n)] = tally.get((hyp, name, n), 0) + verdict.rejected
    cells = tuple(HarnessCell(h, m, n, runs, k) for (h, m, n), k in tally.items())
    verdicts = tuple((h, m, n, r, v) for (h, m, n, r), v in zip(labels, results))
    return HarnessReport(getattr(runner, "name", "test"), cells, verdicts, wall_times)
