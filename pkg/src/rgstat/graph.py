"""Rooted marked graphs, lazy graph oracles, balls and canonical codes.

A *patch* is a finite rooted graph whose vertices carry a mark from a finite
alphabet ``{0, ..., alphabet_size - 1}``.  Two patches are identified when a
root-, mark- and edge-preserving bijection exists between them; the
:class:`CanonicalCode` of a patch is a prefix-free bit string that is equal for
two patches exactly when they are identified this way.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from rgstat.errors import BudgetExceededError, InvalidPatchError, OracleError

DEFAULT_CANON_BUDGET = 64
BRUTEFORCE_LIMIT = 10


@dataclass(frozen=True)
class RootedPatch:
    """Immutable finite rooted marked graph.

    ``boundary`` holds the vertices whose neighbourhood may be incomplete
    (for a ball, the vertices at distance exactly ``r`` from the root).
    """

    vertices: tuple[tuple[int, int], ...]
    edges: frozenset[tuple[int, int]]
    root: int
    degree_bound: int
    alphabet_size: int
    boundary: frozenset[int] = field(default=frozenset())

    def __post_init__(self) -> None:
        ids = [v for v, _ in self.vertices]
        if len(set(ids)) != len(ids):
            raise InvalidPatchError("duplicate vertex id")
        if self.degree_bound < 1 or self.alphabet_size < 1:
            raise InvalidPatchError("degree_bound and alphabet_size must be >= 1")
        known = set(ids)
        if self.root not in known:
            raise InvalidPatchError(f"root {self.root} is not a vertex")
        for v, m in self.vertices:
            if not 0 <= m < self.alphabet_size:
                raise InvalidPatchError(f"mark {m} of vertex {v} outside [0, {self.alphabet_size})")
        degree = dict.fromkeys(ids, 0)
        for u, w in self.edges:
            if u == w:
                raise InvalidPatchError(f"self-loop at {u}")
            if u > w:
                raise InvalidPatchError(f"edge ({u}, {w}) not normalized; use RootedPatch.build")
            if u not in known or w not in known:
                raise InvalidPatchError(f"edge ({u}, {w}) references an unknown vertex")
            degree[u] += 1
            degree[w] += 1
        for v, d in degree.items():
            if d > self.degree_bound:
                raise InvalidPatchError(f"vertex {v} has degree {d} > {self.degree_bound}")
        if not self.boundary <= known:
            raise InvalidPatchError("boundary contains unknown vertices")
        if len(self.distances) != len(ids):
            raise InvalidPatchError("patch is not connected")

    @classmethod
    def build(
        cls,
        marks: Mapping[int, int],
        edges: Iterable[tuple[int, int]],
        root: int,
        degree_bound: int,
        alphabet_size: int,
        boundary: Iterable[int] = (),
    ) -> RootedPatch:
        norm = set()
        for u, w in edges:
            if u == w:
                raise InvalidPatchError(f"self-loop at {u}")
            norm.add((u, w) if u < w else (w, u))
        return cls(
            vertices=tuple((v, m) for v, m in marks.items()),
            edges=frozenset(norm),
            root=root,
            degree_bound=degree_bound,
            alphabet_size=alphabet_size,
            boundary=frozenset(boundary),
        )

    @cached_property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        adj: dict[int, list[int]] = {v: [] for v, _ in self.vertices}
        for u, w in self.edges:
            adj[u].append(w)
            adj[w].append(u)
        return {v: tuple(sorted(nb)) for v, nb in adj.items()}

    @cached_property
    def marks(self) -> dict[int, int]:
        return dict(self.vertices)

    @cached_property
    def distances(self) -> dict[int, int]:
        adj: dict[int, list[int]] = {v: [] for v, _ in self.vertices}
        for u, w in self.edges:
            if u in adj and w in adj:
                adj[u].append(w)
                adj[w].append(u)
        dist = {self.root: 0}
        queue = deque([self.root])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    def __len__(self) -> int:
        return len(self.vertices)

    def relabel(self, mapping: Mapping[int, int]) -> RootedPatch:
        """Rename vertex ids; ``mapping`` must be injective on the vertex set."""
        return RootedPatch.build(
            {mapping[v]: m for v, m in self.vertices},
            ((mapping[u], mapping[w]) for u, w in self.edges),
            mapping[self.root],
            self.degree_bound,
            self.alphabet_size,
            (mapping[v] for v in self.boundary),
        )

    def to_text(self) -> str:
        lines = [
            "# rooted patch",
            f"M {self.degree_bound}",
            f"A {self.alphabet_size}",
            f"root {self.root}",
        ]
        for v, m in sorted(self.vertices):
            lines.append(f"v {v} {m}" + (" b" if v in self.boundary else ""))
        for u, w in sorted(self.edges):
            lines.append(f"e {u} {w}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RootedPatch:
        marks: dict[int, int] = {}
        edges: list[tuple[int, int]] = []
        boundary: list[int] = []
        root = degree_bound = alphabet = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "M" and len(tok) == 2:
                    degree_bound = int(tok[1])
                elif tok[0] == "A" and len(tok) == 2:
                    alphabet = int(tok[1])
                elif tok[0] == "root" and len(tok) == 2:
                    if root is not None:
                        raise InvalidPatchError(f"line {lineno}: second root line")
                    root = int(tok[1])
                elif tok[0] == "v" and len(tok) in (3, 4):
                    v = int(tok[1])
                    if v in marks:
                        raise InvalidPatchError(f"line {lineno}: vertex {v} declared twice")
                    marks[v] = int(tok[2])
                    if len(tok) == 4:
                        if tok[3] != "b":
                            raise InvalidPatchError(f"line {lineno}: expected 'b' boundary flag")
                        boundary.append(v)
                elif tok[0] == "e" and len(tok) == 3:
                    edges.append((int(tok[1]), int(tok[2])))
                else:
                    raise InvalidPatchError(f"line {lineno}: cannot parse {raw!r}")
            except ValueError as exc:
                if isinstance(exc, InvalidPatchError):
                    raise
                raise InvalidPatchError(f"line {lineno}: {exc}") from None
        if root is None:
            raise InvalidPatchError("missing root line")
        if degree_bound is None or alphabet is None:
            raise InvalidPatchError("missing 'M' or 'A' header line")
        return cls.build(marks, edges, root, degree_bound, alphabet, boundary)


def radius(patch: RootedPatch) -> int:
    return max(patch.distances.values())


# ---------------------------------------------------------------------------
# Oracles


class GraphOracle:
    """Read-only window onto a (possibly infinite) marked graph.

    Subclasses implement :meth:`neighbors` and :meth:`mark`.  ``acyclic`` is a
    promise that the graph is a forest, which lets ball extraction skip
    adjacency queries on the outer shell.
    """

    root: int
    degree_bound: int
    alphabet_size: int
    seed: int = 0
    acyclic: bool = False

    def neighbors(self, v: int) -> tuple[int, ...]:
        raise NotImplementedError

    def mark(self, v: int) -> int:
        raise NotImplementedError

    def query(self, v: int) -> tuple[int, tuple[int, ...]]:
        return self.mark(v), self.neighbors(v)


class PatchOracle(GraphOracle):
    """Serve a finite patch through the oracle interface."""

    def __init__(self, patch: RootedPatch):
        self.patch = patch
        self.root = patch.root
        self.degree_bound = patch.degree_bound
        self.alphabet_size = patch.alphabet_size
        self._adj = patch.adjacency
        self._marks = patch.marks

    def neighbors(self, v: int) -> tuple[int, ...]:
        try:
            return self._adj[v]
        except KeyError:
            raise OracleError(f"vertex {v} is not in the patch") from None

    def mark(self, v: int) -> int:
        try:
            return self._marks[v]
        except KeyError:
            raise OracleError(f"vertex {v} is not in the patch") from None


class MemoOracle(GraphOracle):
    """Thread-safe memoizing wrapper; answers are pinned after the first query."""

    def __init__(self, inner: GraphOracle):
        self.inner = inner
        self.root = inner.root
        self.degree_bound = inner.degree_bound
        self.alphabet_size = inner.alphabet_size
        self.seed = inner.seed
        self.acyclic = inner.acyclic
        self._cache: dict[int, tuple[int, tuple[int, ...]]] = {}
        self._lock = threading.Lock()

    def query(self, v: int) -> tuple[int, tuple[int, ...]]:
        hit = self._cache.get(v)
        if hit is None:
            with self._lock:
                hit = self._cache.get(v)
                if hit is None:
                    hit = self.inner.query(v)
                    self._cache[v] = hit
        return hit

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.query(v)[1]

    def mark(self, v: int) -> int:
        return self.query(v)[0]


def ball_layout(
    oracle: GraphOracle, root: int, r: int, budget: int | None = None
) -> tuple[list[int], dict[int, int], list[int]]:
    """Breadth-first layout of the radius-``r`` ball.

    Returns the vertex order (root first, non-decreasing distance), the
    vertex -> position index, and the index at which each distance shell
    starts (``starts[d]``; ``starts[r + 1] == len(order)``).
    """
    if r < 0:
        raise ValueError("radius must be >= 0")
    order = [root]
    index = {root: 0}
    starts = [0, 1]
    nbrs = oracle.neighbors
    lo = 0
    for depth in range(1, r + 1):
        hi = len(order)
        for i in range(lo, hi):
            for w in nbrs(order[i]):
                if w not in index:
                    index[w] = len(order)
                    order.append(w)
        if budget is not None and len(order) > budget:
            raise BudgetExceededError(
                f"ball of radius {depth} has {len(order)} vertices, budget is {budget}",
                radius=depth,
                size=len(order),
            )
        lo = hi
        starts.append(len(order))
    return order, index, starts


def ball_edges(
    oracle: GraphOracle, order: Sequence[int], index: Mapping[int, int], shell_start: int
) -> list[tuple[int, int]]:
    """Edges of the induced subgraph on ``order`` as sorted index pairs ``(i, j)``, i < j.

    Vertices at positions ``>= shell_start`` form the outer shell; on acyclic
    oracles their adjacency is not queried (all their ball edges point inward).
    """
    nbrs = oracle.neighbors
    stop = shell_start if oracle.acyclic else len(order)
    edges = []
    for i in range(stop):
        for w in nbrs(order[i]):
            j = index.get(w)
            if j is not None and j > i:
                edges.append((i, j))
    return edges


def ball(oracle: GraphOracle, root: int, r: int, budget: int | None = None) -> RootedPatch:
    """Induced subgraph on all vertices within distance ``r`` of ``root``."""
    order, index, starts = ball_layout(oracle, root, r, budget)
    edges = ball_edges(oracle, order, index, starts[r])
    mark = oracle.mark
    return RootedPatch.build(
        {v: mark(v) for v in order},
        ((order[i], order[j]) for i, j in edges),
        root,
        oracle.degree_bound,
        oracle.alphabet_size,
        order[starts[r]:],
    )


# ---------------------------------------------------------------------------
# Canonical codes


def _gamma_bits(x: int) -> tuple[int, int]:
    """Elias-gamma code of x >= 1 as (value, length)."""
    if x < 1:
        raise ValueError("Elias gamma needs x >= 1")
    length = x.bit_length()
    return x, 2 * length - 1


@dataclass(frozen=True)
class CanonicalCode:
    """Prefix-free bit string; ``value`` holds the ``nbits`` bits, MSB first.

    Layout: gamma(n) gamma(alphabet_size) gamma(degree_bound), then each mark
    in canonical order using ``ceil(log2 alphabet_size)`` bits, then the
    lower-triangular adjacency bitmap (rows 1..n-1, columns 0..row-1).
    """

    value: int
    nbits: int

    def to_bytes(self) -> bytes:
        pad = -self.nbits % 8
        return (self.value << pad).to_bytes((self.nbits + pad) // 8, "big")

    def hex(self) -> str:
        return self.to_bytes().hex()

    def __str__(self) -> str:
        return self.hex()

    def bits(self) -> str:
        return format(self.value, f"0{self.nbits}b") if self.nbits else ""

    def is_prefix_of(self, other: CanonicalCode) -> bool:
        if self.nbits > other.nbits:
            return False
        return other.value >> (other.nbits - self.nbits) == self.value

    @classmethod
    def from_hex(cls, text: str) -> CanonicalCode:
        raw = bytes.fromhex(text)
        total = 8 * len(raw)
        value = int.from_bytes(raw, "big")
        reader = _BitReader(value, total)
        n = reader.gamma()
        alphabet = reader.gamma()
        reader.gamma()
        width = (alphabet - 1).bit_length()
        nbits = reader.pos + n * width + n * (n - 1) // 2
        if nbits > total or total - nbits >= 8 or value & ((1 << (total - nbits)) - 1):
            raise ValueError(f"malformed canonical code {text!r}")
        return cls(value >> (total - nbits), nbits)

    def decode(self) -> RootedPatch:
        """Rebuild a representative patch (ids = canonical positions, root 0)."""
        reader = _BitReader(self.value, self.nbits)
        n = reader.gamma()
        alphabet = reader.gamma()
        degree_bound = reader.gamma()
        width = (alphabet - 1).bit_length()
        marks = {i: reader.read(width) for i in range(n)}
        edges = [(j, i) for i in range(1, n) for j in range(i) if reader.read(1)]
        if reader.pos != self.nbits:
            raise ValueError("trailing bits in canonical code")
        patch = RootedPatch.build(marks, edges, 0, degree_bound, alphabet)
        dist = patch.distances
        far = max(dist.values())
        return RootedPatch.build(
            marks, edges, 0, degree_bound, alphabet, (v for v, d in dist.items() if d == far)
        )


class _BitReader:
    def __init__(self, value: int, nbits: int):
        self.value = value
        self.nbits = nbits
        self.pos = 0

    def read(self, k: int) -> int:
        if self.pos + k > self.nbits:
            raise ValueError("canonical code truncated")
        self.pos += k
        return (self.value >> (self.nbits - self.pos)) & ((1 << k) - 1)

    def gamma(self) -> int:
        zeros = 0
        while self.read(1) == 0:
            zeros += 1
        return (1 << zeros) | self.read(zeros)


def _refine(cells: list[list[int]], nbrs: Sequence[Sequence[int]], color: list[int]) -> list[list[int]]:
    # Equitable refinement; new cell order depends only on isomorphism-invariant data.
    for ci, cell in enumerate(cells):
        for v in cell:
            color[v] = ci
    while True:
        out = []
        split = False
        for cell in cells:
            if len(cell) == 1:
                out.append(cell)
                continue
            groups: dict[tuple[int, ...], list[int]] = {}
            for v in cell:
                sig = tuple(sorted([color[u] for u in nbrs[v]]))
                groups.setdefault(sig, []).append(v)
            if len(groups) == 1:
                out.append(cell)
            else:
                split = True
                out.extend(groups[sig] for sig in sorted(groups))
        if not split:
            return out
        cells = out
        for ci, cell in enumerate(cells):
            for v in cell:
                color[v] = ci


def _adjacency_bits(order: Sequence[int], nbrs: Sequence[Sequence[int]]) -> int:
    pos = [0] * len(order)
    for i, v in enumerate(order):
        pos[v] = i
    acc = 0
    for i in range(1, len(order)):
        row = 0
        for w in nbrs[order[i]]:
            j = pos[w]
            if j < i:
                row |= 1 << (i - 1 - j)
        acc = (acc << i) | row
    return acc


def canonical_order(
    nbrs: Sequence[Sequence[int]], marks: Sequence[int], root: int = 0
) -> list[int]:
    """Canonical vertex order of a connected rooted marked graph on ``0..n-1``.

    Colour refinement seeded with (distance to root, mark), then
    individualization-refinement over the remaining non-singleton cells; the
    leaf with the smallest adjacency bitmap wins.  Automorphisms found between
    equal leaves prune sibling branches lying in the same orbit.
    """
    n = len(nbrs)
    dist = [-1] * n
    dist[root] = 0
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for w in nbrs[u]:
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(w)
    if min(dist) < 0:
        raise InvalidPatchError("graph is not connected")
    groups: dict[tuple[int, int], list[int]] = {}
    for v in range(n):
        groups.setdefault((dist[v], marks[v]), []).append(v)
    cells = [groups[k] for k in sorted(groups)]
    color = [0] * n

    best: list = [None, None]  # [certificate, order]
    autos: list[list[int]] = []

    def orbit_pruned(v: int, explored: list[int], fixed: list[int]) -> bool:
        parent = list(range(n))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for gamma in autos:
            if all(gamma[f] == f for f in fixed):
                for x in range(n):
                    a, b = find(x), find(gamma[x])
                    if a != b:
                        parent[a] = b
        root_v = find(v)
        return any(find(e) == root_v for e in explored)

    def search(cells: list[list[int]], fixed: list[int]) -> None:
        cells = _refine(cells, nbrs, color)
        target = next((i for i, c in enumerate(cells) if len(c) > 1), None)
        if target is None:
            order = [c[0] for c in cells]
            cert = _adjacency_bits(order, nbrs)
            if best[0] is None or cert < best[0]:
                best[0], best[1] = cert, order
            elif cert == best[0]:
                gamma = [0] * n
                for a, b in zip(best[1], order):
                    gamma[a] = b
                autos.append(gamma)
            return
        cell = cells[target]
        explored: list[int] = []
        for v in sorted(cell):
            if explored and autos and orbit_pruned(v, explored, fixed):
                continue
            explored.append(v)
            rest = [u for u in cell if u != v]
            search(cells[:target] + [[v], rest] + cells[target + 1:], fixed + [v])

    search(cells, [])
    return best[1]


def encode_indexed(
    nbrs: Sequence[Sequence[int]],
    marks: Sequence[int],
    degree_bound: int,
    alphabet_size: int,
    root: int = 0,
) -> CanonicalCode:
    """Canonical code of a graph given as index-based adjacency lists."""
    n = len(nbrs)
    order = canonical_order(nbrs, marks, root)
    value, nbits = 0, 0
    for x in (n, alphabet_size, degree_bound):
        g, glen = _gamma_bits(x)
        value = (value << glen) | g
        nbits += glen
    width = (alphabet_size - 1).bit_length()
    if width:
        for v in order:
            value = (value << width) | marks[v]
        nbits += width * n
    adj_len = n * (n - 1) // 2
    value = (value << adj_len) | _adjacency_bits(order, nbrs)
    return CanonicalCode(value, nbits + adj_len)


def canonical_encode(patch: RootedPatch, budget: int = DEFAULT_CANON_BUDGET) -> CanonicalCode:
    """Code identifying ``patch`` up to root-preserving marked isomorphism."""
    if len(patch) > budget:
        raise BudgetExceededError(
            f"patch has {len(patch)} vertices, canonicalization budget is {budget}",
            radius=radius(patch),
            size=len(patch),
        )
    ids = [v for v, _ in patch.vertices]
    pos = {v: i for i, v in enumerate(ids)}
    adj = patch.adjacency
    nbrs = [[pos[w] for w in adj[v]] for v in ids]
    marks = [m for _, m in patch.vertices]
    return encode_indexed(nbrs, marks, patch.degree_bound, patch.alphabet_size, pos[patch.root])


# ---------------------------------------------------------------------------
# Brute-force isomorphism (test oracle)


def is_isomorphic_bruteforce(
    a: RootedPatch, b: RootedPatch, limit: int = BRUTEFORCE_LIMIT
) -> bool:
    """Exhaustive search for a root-, mark- and edge-preserving bijection.

    Candidate images are tried vertex by vertex; a partial assignment is
    abandoned as soon as it breaks mark or adjacency agreement with the
    vertices already placed.  No refinement or invariants beyond that.
    """
    if len(a) > limit or len(b) > limit:
        raise ValueError(f"brute-force isomorphism is limited to {limit} vertices")
    if (a.degree_bound, a.alphabet_size) != (b.degree_bound, b.alphabet_size):
        return False
    if len(a) != len(b) or len(a.edges) != len(b.edges):
        return False
    if a.marks[a.root] != b.marks[b.root]:
        return False
    a_ids = [a.root] + [v for v, _ in a.vertices if v != a.root]
    b_ids = [v for v, _ in b.vertices if v != b.root]
    a_adj = {v: set(nb) for v, nb in a.adjacency.items()}
    b_adj = {v: set(nb) for v, nb in b.adjacency.items()}
    a_marks, b_marks = a.marks, b.marks
    image = {a.root: b.root}
    used = {b.root}

    def extend(k: int) -> bool:
        if k == len(a_ids):
            return True
        u = a_ids[k]
        for w in b_ids:
            if w in used or a_marks[u] != b_marks[w]:
                continue
            if any((x in a_adj[u]) != (image[x] in b_adj[w]) for x in a_ids[:k]):
                continue
            image[u] = w
            used.add(w)
            if extend(k + 1):
                return True
            del image[u]
            used.discard(w)
        return False

    return extend(1)
