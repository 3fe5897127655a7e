"""Seeded lazy generators of stationary infinite networks.

Tree models are materialized on demand: a vertex's children are created the
first time its adjacency is queried, and each vertex's (child count, mark)
draw is a hash of ``(seed, vertex id)``, so answers never depend on query
order.  Vertex ids are opaque 64-bit integers derived from the parent id.
"""
from __future__ import annotations

import bisect
import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from rgstat._hashing import hash_ints, mix64, unit_float
from rgstat.errors import InvariantViolation, OracleError
from rgstat.graph import GraphOracle

PROB_TOL = 1e-12
STATIONARY_TOL = 1e-10

TreeSymbol = tuple[int, int]  # (child count, mark)
Context = tuple[TreeSymbol, ...]


def _check_distribution(probs, what: str) -> None:
    if any(p < 0 or math.isnan(p) for p in probs):
        raise ValueError(f"{what}: probabilities must be non-negative")
    total = math.fsum(probs)
    if abs(total - 1.0) > PROB_TOL:
        raise ValueError(f"{what}: probabilities sum to {total!r}, expected 1")


def _cumulative(probs) -> list[float]:
    cum = list(itertools.accumulate(probs))
    cum[-1] = 1.0  # absorb rounding so every u in [0, 1) lands somewhere
    return cum


@dataclass(frozen=True)
class OffspringLaw:
    """Child-count law ``probs[j - 1] = P(j children)`` plus an i.i.d. mark law."""

    probs: tuple[float, ...]
    degree_bound: int
    mark_probs: tuple[float, ...] = (1.0,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        object.__setattr__(self, "mark_probs", tuple(float(p) for p in self.mark_probs))
        if self.degree_bound < 2:
            raise ValueError("degree_bound must be >= 2 for leafless trees")
        if not self.probs:
            raise ValueError("offspring law is empty")
        _check_distribution(self.probs, "offspring law")
        if any(p > 0 for p in self.probs[self.degree_bound - 1:]):
            raise ValueError(
                f"offspring law puts mass above {self.degree_bound - 1} children; "
                "child count plus parent link must stay within the degree bound"
            )
        if not self.mark_probs:
            raise ValueError("mark law is empty")
        _check_distribution(self.mark_probs, "mark law")

    @property
    def alphabet_size(self) -> int:
        return len(self.mark_probs)

    def root_law(self) -> dict[int, float]:
        """Law of the root's child count: ``j + 1`` with probability ``p_j``."""
        return {j + 2: p for j, p in enumerate(self.probs) if p > 0}


@dataclass(frozen=True)
class MarkovTreeModel:
    """k-order Markov tree: (child count, mark) of a vertex given its last k ancestors.

    ``kernel`` maps a context (oldest ancestor first) to a distribution over
    (child count, mark) symbols.  Contexts the chain can never reach may be
    omitted.
    """

    order: int
    kernel: Mapping[Context, Mapping[TreeSymbol, float]]
    degree_bound: int
    alphabet_size: int = 1
    _tables: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.degree_bound < 2:
            raise ValueError("degree_bound must be >= 2 for leafless trees")
        kernel = {tuple(map(tuple, ctx)): dict(dist) for ctx, dist in self.kernel.items()}
        if not kernel:
            raise ValueError("kernel is empty")
        tables = {}
        for ctx, dist in kernel.items():
            if len(ctx) != self.order:
                raise ValueError(f"context {ctx} has length {len(ctx)}, expected {self.order}")
            for sym in ctx:
                self._check_symbol(sym, f"context {ctx}")
            for sym in dist:
                self._check_symbol(sym, f"outcome of context {ctx}")
            _check_distribution(list(dist.values()), f"kernel row {ctx}")
            outcomes = sorted(s for s, p in dist.items() if p > 0)
            tables[ctx] = (_cumulative([dist[s] for s in outcomes]), outcomes)
        if self.order:
            for ctx, (_, outcomes) in tables.items():
                for sym in outcomes:
                    nxt = ctx[1:] + (sym,)
                    if nxt not in tables:
                        raise ValueError(f"kernel has no row for context {nxt}, reachable from {ctx}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "_tables", tables)

    def _check_symbol(self, sym, where: str) -> None:
        c, m = sym
        if not 1 <= c <= self.degree_bound - 1:
            raise ValueError(f"{where}: child count {c} outside [1, {self.degree_bound - 1}]")
        if not 0 <= m < self.alphabet_size:
            raise ValueError(f"{where}: mark {m} outside [0, {self.alphabet_size})")

    @classmethod
    def from_offspring(cls, law: OffspringLaw) -> MarkovTreeModel:
        """Order-0 model with the same joint (child count, mark) law as ``law``."""
        dist = {
            (j + 1, m): p * q
            for j, p in enumerate(law.probs)
            for m, q in enumerate(law.mark_probs)
            if p * q > 0
        }
        total = math.fsum(dist.values())
        dist = {s: p / total for s, p in dist.items()}
        return cls(0, {(): dist}, law.degree_bound, law.alphabet_size)

    def stationary_contexts(self) -> dict[Context, float]:
        """Stationary law of the context chain, by power iteration on the lazy chain."""
        contexts = sorted(self._tables)
        if self.order == 0:
            return {(): 1.0}
        pos = {c: i for i, c in enumerate(contexts)}
        n = len(contexts)
        trans = np.zeros((n, n))
        for ctx in contexts:
            for sym, p in self.kernel[ctx].items():
                if p > 0:
                    trans[pos[ctx], pos[ctx[1:] + (sym,)]] += p
        lazy = 0.5 * (trans + np.eye(n))
        pi = np.full(n, 1.0 / n)
        for _ in range(1_000_000):
            nxt = pi @ lazy
            if np.abs(nxt - pi).sum() < STATIONARY_TOL:
                pi = nxt
                break
            pi = nxt
        else:  # pragma: no cover - lazy chains on finite spaces converge
            raise RuntimeError("power iteration did not converge")
        pi = pi / pi.sum()
        return {c: float(p) for c, p in zip(contexts, pi) if p > 0}

    def root_law(self) -> dict[int, float]:
        law: dict[int, float] = {}
        for ctx, w in self.stationary_contexts().items():
            for (c, _), p in self.kernel[ctx].items():
                law[c + 1] = law.get(c + 1, 0.0) + w * p
        return dict(sorted((k, v) for k, v in law.items() if v > 0))


@dataclass(frozen=True)
class TransitiveGraphSpec:
    """Deterministic vertex-transitive graph family.

    ``cayley-integers``: integers, u ~ v iff |u - v| in ``generators``.
    ``regular-tree``: every vertex has ``degree`` neighbours.
    ``grid``: the integer lattice of the given ``dimension``.
    Marks follow ``mark_pattern`` periodically (integer value, or coordinate
    sum on grids); regular trees only support a constant mark.
    """

    family: str
    degree_bound: int
    generators: tuple[int, ...] = ()
    degree: int = 0
    dimension: int = 0
    mark_pattern: tuple[int, ...] = (0,)
    alphabet_size: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "generators", tuple(sorted(set(self.generators))))
        object.__setattr__(self, "mark_pattern", tuple(self.mark_pattern))
        if not self.mark_pattern:
            raise ValueError("mark_pattern is empty")
        if any(not 0 <= m < self.alphabet_size for m in self.mark_pattern):
            raise ValueError(f"mark_pattern entries must lie in [0, {self.alphabet_size})")
        if self.family == "cayley-integers":
            if not self.generators or min(self.generators) < 1:
                raise ValueError("cayley-integers needs a non-empty set of positive generators")
        elif self.family == "regular-tree":
            if self.degree < 2:
                raise ValueError("regular-tree degree must be >= 2")
            if len(set(self.mark_pattern)) > 1:
                raise ValueError("regular-tree supports only a constant mark")
        elif self.family == "grid":
            if not 1 <= self.dimension <= 3:
                raise ValueError("grid dimension must be 1, 2 or 3")
        else:
            raise ValueError(f"unknown transitive family {self.family!r}")
        if self.implied_degree > self.degree_bound:
            raise ValueError(
                f"{self.family} has degree {self.implied_degree} > degree bound {self.degree_bound}"
            )

    @property
    def implied_degree(self) -> int:
        if self.family == "cayley-integers":
            return 2 * len(self.generators)
        if self.family == "regular-tree":
            return self.degree
        return 2 * self.dimension


Model = Union[OffspringLaw, MarkovTreeModel, TransitiveGraphSpec]


class LazyTreeOracle(GraphOracle):
    """Leafless tree built on demand; the root gets one extra child.

    ``draw(context, h)`` returns the (child count, mark) of a vertex whose
    last ``order`` ancestors have the symbols in ``context``, using the
    64-bit hash ``h`` as its only source of randomness.
    """

    acyclic = True

    def __init__(self, draw, order: int, root_context: Context, seed: int,
                 degree_bound: int, alphabet_size: int):
        self._draw = draw
        self.order = order
        self.seed = seed
        self.degree_bound = degree_bound
        self.alphabet_size = alphabet_size
        self._key = hash_ints(seed, 0x7EE)
        self.root = hash_ints(self._key, 0)
        self._parent: dict[int, int | None] = {self.root: None}
        self._depth: dict[int, int] = {self.root: 0}
        self._type: dict[int, TreeSymbol] = {}
        self._ctx: dict[int, Context] = {}
        self._adj: dict[int, tuple[int, ...]] = {}
        self._root_context = root_context
        self._lock = threading.RLock()

    def symbol(self, v: int) -> TreeSymbol:
        """Drawn (child count, mark) of ``v``; the root's actual child count is one more."""
        t = self._type.get(v)
        if t is None:
            with self._lock:
                t = self._type.get(v)
                if t is None:
                    t = self._materialize(v)
        return t

    def _materialize(self, v: int) -> TreeSymbol:
        try:
            parent = self._parent[v]
        except KeyError:
            raise OracleError(f"vertex {v} was never produced by this oracle") from None
        if parent is None:
            ctx = self._root_context
        else:
            self.symbol(parent)
            ctx = self._ctx[parent]
        t = self._draw(ctx, mix64(self._key ^ v))
        self._ctx[v] = (ctx + (t,))[1:] if self.order else ()
        self._type[v] = t
        return t

    def neighbors(self, v: int) -> tuple[int, ...]:
        nb = self._adj.get(v)
        if nb is None:
            with self._lock:
                nb = self._adj.get(v)
                if nb is None:
                    nb = self._expand(v)
        return nb

    def _expand(self, v: int) -> tuple[int, ...]:
        c = self.symbol(v)[0]
        parent = self._parent[v]
        if parent is None:
            c += 1
        depth = self._depth[v] + 1
        kids = []
        for i in range(c):
            w = hash_ints(self._key, v, i + 1)
            if w in self._parent:
                raise InvariantViolation(f"vertex id collision at {w:#x}")
            self._parent[w] = v
            self._depth[w] = depth
            kids.append(w)
        nb = tuple(kids) if parent is None else (parent, *kids)
        self._adj[v] = nb
        return nb

    def mark(self, v: int) -> int:
        return self.symbol(v)[1]

    def children(self, v: int) -> tuple[int, ...]:
        nb = self.neighbors(v)
        return nb if self._parent[v] is None else nb[1:]

    def parent(self, v: int) -> int | None:
        try:
            return self._parent[v]
        except KeyError:
            raise OracleError(f"vertex {v} was never produced by this oracle") from None

    def depth(self, v: int) -> int:
        try:
            return self._depth[v]
        except KeyError:
            raise OracleError(f"vertex {v} was never produced by this oracle") from None

    def __len__(self) -> int:
        return len(self._parent)


def agw_oracle(law: OffspringLaw, seed: int) -> LazyTreeOracle:
    """Augmented Galton-Watson tree: i.i.d. child counts, root shifted by one."""
    counts = _cumulative(law.probs)
    marks = _cumulative(law.mark_probs)
    single_mark = len(law.mark_probs) == 1

    def draw(_ctx: Context, h: int) -> TreeSymbol:
        c = bisect.bisect_right(counts, unit_float(h)) + 1
        m = 0 if single_mark else bisect.bisect_right(marks, unit_float(mix64(h)))
        return c, m

    return LazyTreeOracle(draw, 0, (), seed, law.degree_bound, law.alphabet_size)


def markov_tree_oracle(model: MarkovTreeModel, seed: int) -> LazyTreeOracle:
    """k-order Markov tree; the root's missing ancestry is drawn from the stationary context law."""
    tables = model._tables
    root_context: Context = ()
    if model.order:
        pi = model.stationary_contexts()
        ctxs = sorted(pi)
        u = unit_float(hash_ints(seed, 0xC0DE))
        root_context = ctxs[bisect.bisect_right(_cumulative([pi[c] for c in ctxs]), u)]

    def draw(ctx: Context, h: int) -> TreeSymbol:
        try:
            cum, outcomes = tables[ctx]
        except KeyError:
            raise OracleError(f"kernel has no row for context {ctx}") from None
        return outcomes[bisect.bisect_right(cum, unit_float(h))]

    return LazyTreeOracle(draw, model.order, root_context, seed,
                          model.degree_bound, model.alphabet_size)


class CayleyIntegersOracle(GraphOracle):
    def __init__(self, spec: TransitiveGraphSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed
        self.degree_bound = spec.degree_bound
        self.alphabet_size = spec.alphabet_size
        self.acyclic = len(spec.generators) == 1
        self._steps = tuple(sorted([-s for s in spec.generators] + list(spec.generators)))
        self._pattern = spec.mark_pattern
        # a uniformly random phase keeps periodic marks stationary
        self.root = seed % len(self._pattern)

    def neighbors(self, v: int) -> tuple[int, ...]:
        return tuple(v + s for s in self._steps)

    def mark(self, v: int) -> int:
        return self._pattern[v % len(self._pattern)]


_GRID_BITS = 21
_GRID_OFF = 1 << (_GRID_BITS - 1)
_GRID_MASK = (1 << _GRID_BITS) - 1


class GridOracle(GraphOracle):
    acyclic = False

    def __init__(self, spec: TransitiveGraphSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed
        self.degree_bound = spec.degree_bound
        self.alphabet_size = spec.alphabet_size
        self.dimension = spec.dimension
        self.acyclic = spec.dimension == 1
        self._pattern = spec.mark_pattern
        self.root = self.encode((seed % len(self._pattern),) + (0,) * (self.dimension - 1))

    def encode(self, coords) -> int:
        v = 0
        for i, x in enumerate(coords):
            if not -_GRID_OFF <= x < _GRID_OFF:
                raise OracleError(f"grid coordinate {x} outside the addressable window")
            v |= (x + _GRID_OFF) << (_GRID_BITS * i)
        return v

    def decode(self, v: int) -> tuple[int, ...]:
        return tuple(((v >> (_GRID_BITS * i)) & _GRID_MASK) - _GRID_OFF for i in range(self.dimension))

    def neighbors(self, v: int) -> tuple[int, ...]:
        x = self.decode(v)
        out = []
        for i in range(self.dimension):
            for step in (-1, 1):
                y = list(x)
                y[i] += step
                out.append(self.encode(y))
        return tuple(sorted(out))

    def mark(self, v: int) -> int:
        return self._pattern[sum(self.decode(v)) % len(self._pattern)]


def transitive_oracle(spec: TransitiveGraphSpec, seed: int = 0) -> GraphOracle:
    """Oracle for a deterministic transitive graph; ``seed`` only sets the mark phase."""
    if spec.family == "cayley-integers":
        return CayleyIntegersOracle(spec, seed)
    if spec.family == "grid":
        return GridOracle(spec, seed)
    law = OffspringLaw(
        tuple(1.0 if j == spec.degree - 1 else 0.0 for j in range(1, spec.degree)),
        spec.degree_bound,
        tuple(1.0 if m == spec.mark_pattern[0] else 0.0 for m in range(spec.alphabet_size)),
    )
    return agw_oracle(law, seed)


def build_oracle(model: Model, seed: int) -> GraphOracle:
    if isinstance(model, OffspringLaw):
        return agw_oracle(model, seed)
    if isinstance(model, MarkovTreeModel):
        return markov_tree_oracle(model, seed)
    if isinstance(model, TransitiveGraphSpec):
        return transitive_oracle(model, seed)
    raise TypeError(f"not a model: {type(model).__name__}")


def model_summary(model: Model) -> dict:
    """JSON-ready description of a model (family, degree bound, alphabet, root law)."""
    if isinstance(model, OffspringLaw):
        return {
            "family": "agw",
            "degree_bound": model.degree_bound,
            "alphabet_size": model.alphabet_size,
            "offspring": list(model.probs),
            "marks": list(model.mark_probs),
            "root_children_law": {str(k): v for k, v in model.root_law().items()},
        }
    if isinstance(model, MarkovTreeModel):
        return {
            "family": "markov-tree",
            "degree_bound": model.degree_bound,
            "alphabet_size": model.alphabet_size,
            "order": model.order,
            "contexts": len(model.kernel),
            "root_children_law": {str(k): round(v, 12) for k, v in model.root_law().items()},
        }
    return {
        "family": model.family,
        "degree_bound": model.degree_bound,
        "alphabet_size": model.alphabet_size,
        "degree": model.implied_degree,
        "generators": list(model.generators),
        "dimension": model.dimension,
        "mark_pattern": list(model.mark_pattern),
        "root_children_law": {str(model.implied_degree): 1.0},
    }


def is_tree_model(model: Model) -> bool:
    if isinstance(model, TransitiveGraphSpec):
        return model.family == "regular-tree"
    return True


__all__ = [
    "OffspringLaw",
    "MarkovTreeModel",
    "TransitiveGraphSpec",
    "Model",
    "LazyTreeOracle",
    "CayleyIntegersOracle",
    "GridOracle",
    "agw_oracle",
    "markov_tree_oracle",
    "transitive_oracle",
    "build_oracle",
    "model_summary",
    "is_tree_model",
]
