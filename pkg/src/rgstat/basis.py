"""Registry of ball isomorphism classes and their summable weights."""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

from rgstat.graph import (
    DEFAULT_CANON_BUDGET,
    CanonicalCode,
    RootedPatch,
    canonical_encode,
    radius,
)


@dataclass(frozen=True)
class BallClass:
    """Isomorphism class of a rooted ball; weight is ``2 ** -len(code)``."""

    code: CanonicalCode
    radius: int

    @property
    def weight(self) -> float:
        return math.ldexp(1.0, -self.code.nbits)

    @property
    def exact_weight(self) -> Fraction:
        return Fraction(1, 1 << self.code.nbits)


def weight_of(cls: BallClass) -> float:
    return cls.weight


class BasisRegistry:
    """Lazily discovered basis: one :class:`BallClass` per canonical code.

    Iteration follows first-registration order.  Besides the classes the
    registry keeps a memo from labelled ball layouts to codes, so a ball seen
    again under the same vertex numbering is not re-canonicalized.
    """

    def __init__(self) -> None:
        self._classes: dict[CanonicalCode, BallClass] = {}
        self._layouts: dict[tuple[int, int], dict] = {}
        self._lock = threading.Lock()

    def register(self, code: CanonicalCode, radius: int | None = None) -> BallClass:
        found = self._classes.get(code)
        if found is not None:
            return found
        with self._lock:
            found = self._classes.get(code)
            if found is None:
                if radius is None:
                    radius = _radius_of(code)
                found = BallClass(code, radius)
                self._classes[code] = found
        return found

    def classify(self, patch: RootedPatch, budget: int = DEFAULT_CANON_BUDGET) -> BallClass:
        code = canonical_encode(patch, budget)
        found = self._classes.get(code)
        return found if found is not None else self.register(code, radius(patch))

    def layout_cache(self, degree_bound: int, alphabet_size: int) -> dict:
        key = (degree_bound, alphabet_size)
        cache = self._layouts.get(key)
        if cache is None:
            with self._lock:
                cache = self._layouts.setdefault(key, {})
        return cache

    def get(self, code: CanonicalCode) -> BallClass | None:
        return self._classes.get(code)

    def __contains__(self, code: CanonicalCode) -> bool:
        return code in self._classes

    def __iter__(self) -> Iterator[BallClass]:
        return iter(list(self._classes.values()))

    def __len__(self) -> int:
        return len(self._classes)

    def kraft_sum(self) -> Fraction:
        return sum((c.exact_weight for c in self._classes.values()), Fraction(0))

    def dump(self) -> str:
        return "".join(f"{c.code.hex()} {c.radius} {c.weight!r}\n" for c in self)

    @classmethod
    def load(cls, text: str) -> BasisRegistry:
        reg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                hexcode, r, _ = line.split()
                reg.register(CanonicalCode.from_hex(hexcode), int(r))
            except ValueError as exc:
                raise ValueError(f"registry line {lineno}: {exc}") from None
        return reg


def classify(patch: RootedPatch, registry: BasisRegistry, budget: int = DEFAULT_CANON_BUDGET) -> BallClass:
    return registry.classify(patch, budget)


def _radius_of(code: CanonicalCode) -> int:
    return radius(code.decode())


def enumerate_radius1_patches(degree_bound: int, alphabet_size: int) -> list[RootedPatch]:
    """One representative per isomorphism class of radius-<=1 balls.

    Covers the single vertex plus every root with 1..M neighbours, every
    marking and every edge set among the neighbours respecting the degree bound.
    """
    seen: dict[CanonicalCode, RootedPatch] = {}
    for a in range(alphabet_size):
        p = RootedPatch.build({0: a}, [], 0, degree_bound, alphabet_size)
        seen.setdefault(canonical_encode(p), p)
    for d in range(1, degree_bound + 1):
        leaves = range(1, d + 1)
        pairs = list(itertools.combinations(leaves, 2))
        for marks in itertools.product(range(alphabet_size), repeat=d + 1):
            for mask in range(1 << len(pairs)):
                inner = [pairs[i] for i in range(len(pairs)) if mask >> i & 1]
                deg = dict.fromkeys(leaves, 1)
                for u, w in inner:
                    deg[u] += 1
                    deg[w] += 1
                if max(deg.values()) > degree_bound:
                    continue
                p = RootedPatch.build(
                    dict(enumerate(marks)),
                    [(0, v) for v in leaves] + inner,
                    0,
                    degree_bound,
                    alphabet_size,
                    leaves,
                )
                seen.setdefault(canonical_encode(p), p)
    return [seen[c] for c in sorted(seen, key=lambda c: (c.nbits, c.value))]


def has_cycle(patch: RootedPatch) -> bool:
    return len(patch.edges) >= len(patch)
