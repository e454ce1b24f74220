"""Graphs the cells live on: complete graphs, explicit edge lists and random
unit ball graphs with exact (dyadic) coordinates."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .core import format_rational, rational

#: coordinates live on a grid of 2**-GRID_BITS units
GRID_BITS = 12
MAX_RESAMPLES = 100


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset[tuple[int, int]]
    coordinates: Optional[tuple[tuple[Fraction, ...], ...]] = None
    params: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError("a topology needs at least one vertex")
        norm = set()
        for u, v in self.edges:
            if u == v:
                raise TopologyError(f"self-loop at {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise TopologyError(f"edge {{{u}, {v}}} outside 0..{self.n - 1}")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))
        if self.coordinates is not None:
            if len(self.coordinates) != self.n:
                raise TopologyError("one coordinate tuple per vertex required")
            if set(unit_ball_edges(self.coordinates)) != norm:
                raise TopologyError("edges disagree with the unit-distance rule")
        adj = [set() for _ in range(self.n)]
        for u, v in norm:
            adj[u].add(v)
            adj[v].add(u)
        object.__setattr__(self, "_adj", tuple(frozenset(a) for a in adj))

    @property
    def is_complete(self) -> bool:
        return len(self.edges) == self.n * (self.n - 1) // 2

    def neighbors(self, v: int) -> frozenset[int]:
        return self._adj[v]

    def degree(self, v: int) -> int:
        return len(self._adj[v])

    def adjacency(self) -> sp.csr_matrix:
        if not self.edges:
            return sp.csr_matrix((self.n, self.n), dtype=np.int64)
        e = np.array(sorted(self.edges), dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(len(rows), dtype=np.int64)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def to_json(self) -> dict:
        d = {"n": self.n, "edges": [list(e) for e in sorted(self.edges)]}
        if self.coordinates is not None:
            d["coordinates"] = [[format_rational(x) for x in c] for c in self.coordinates]
        if self.params:
            d["params"] = dict(self.params)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "Topology":
        if d.get("kind") == "complete":
            return complete(int(d["n"]))
        coords = d.get("coordinates")
        if coords is not None:
            coords = tuple(tuple(rational(x) for x in c) for c in coords)
        n = int(d.get("n", len(d.get("vertices", ())) or 0))
        return cls(n, frozenset(tuple(e) for e in d.get("edges", ())), coords,
                   d.get("params", {}))


def complete(n: int) -> Topology:
    return Topology(n, frozenset((u, v) for u in range(n) for v in range(u + 1, n)),
                    params={"kind": "complete", "n": n})


def from_edges(n: int, edges: Iterable[tuple[int, int]]) -> Topology:
    return Topology(n, frozenset(tuple(e) for e in edges))


def path(n: int) -> Topology:
    return from_edges(n, ((i, i + 1) for i in range(n - 1)))


def unit_ball_edges(coords: Sequence[Sequence[Fraction]]) -> list[tuple[int, int]]:
    """All pairs at Euclidean distance <= 1, compared exactly on squares."""
    if not coords:
        return []
    scale = math.lcm(*(x.denominator for c in coords for x in c))
    ints = [[int(x * scale) for x in c] for c in coords]
    if max(abs(x) for c in ints for x in c) < 2 ** 30 and scale < 2 ** 30:
        return _grid_edges(np.array(ints, dtype=np.int64), scale)
    out = []
    for u in range(len(ints)):
        for v in range(u + 1, len(ints)):
            if sum((a - b) ** 2 for a, b in zip(ints[u], ints[v])) <= scale * scale:
                out.append((u, v))
    return out


def embedded(coords: Sequence[Sequence]) -> Topology:
    coords = tuple(tuple(rational(x) for x in c) for c in coords)
    return Topology(len(coords), frozenset(unit_ball_edges(coords)), coords)


@dataclass(frozen=True)
class UbgParams:
    n: int
    dim: int = 2
    side: Fraction = Fraction(4)
    seed: int = 0
    policy: str = "resample"
    max_attempts: int = MAX_RESAMPLES

    def __post_init__(self):
        object.__setattr__(self, "side", rational(self.side))
        if self.dim not in (1, 2, 3):
            raise TopologyError("dimension must be 1, 2 or 3")
        if self.side <= 0:
            raise TopologyError("side length must be positive")
        if self.policy not in ("resample", "reject"):
            raise TopologyError(f"unknown connectivity policy {self.policy!r}")

    def to_json(self) -> dict:
        return {"n": self.n, "dim": self.dim, "side": format_rational(self.side),
                "seed": self.seed, "policy": self.policy, "max_attempts": self.max_attempts}


def side_for_degree(n: int, degree: float, dim: int = 2) -> Fraction:
    """Box side giving roughly ``degree`` expected neighbours (boundary
    effects ignored), snapped to the coordinate grid."""
    unit_ball = {1: 2.0, 2: math.pi, 3: 4 * math.pi / 3}[dim]
    side = ((n - 1) * unit_ball / degree) ** (1 / dim)
    return Fraction(round(side * 2 ** GRID_BITS), 2 ** GRID_BITS)


def _grid_edges(points: np.ndarray, unit: int) -> list[tuple[int, int]]:
    # |coords| < 2**30 keeps squared sums inside int64
    diff = points[:, None, :] - points[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    u, v = np.nonzero(np.triu(d2 <= unit * unit, k=1))
    return list(zip(u.tolist(), v.tolist()))


def ubg_random(params: UbgParams) -> Topology:
    """Uniform points in ``[0, side]^dim`` joined at distance <= 1.

    Resamples until the graph is connected (at most ``max_attempts`` draws
    under the ``resample`` policy, a single draw under ``reject``).
    """
    rng = np.random.default_rng(params.seed)
    hi = int(params.side * 2 ** GRID_BITS)
    attempts = 1 if params.policy == "reject" else params.max_attempts
    for attempt in range(1, attempts + 1):
        pts = rng.integers(0, hi + 1, size=(params.n, params.dim), dtype=np.int64)
        edges = _grid_edges(pts, 1 << GRID_BITS)
        adj = [[] for _ in range(params.n)]
        for u, v in edges:
            adj[u].append(v)
            adj[v].append(u)
        if _connected(adj):
            coords = tuple(tuple(Fraction(int(x), 2 ** GRID_BITS) for x in row) for row in pts)
            meta = {"kind": "ubg", **params.to_json(), "attempts": attempt}
            return Topology(params.n, frozenset(edges), coords, meta)
    raise TopologyError(f"could not draw a connected unit ball graph in {attempts} attempt(s)")


def _connected(adj: Sequence[Sequence[int]]) -> bool:
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(adj)


def max_degree(t: Topology) -> int:
    return max(t.degree(v) for v in range(t.n))


def is_connected(t: Topology) -> bool:
    return _connected([t.neighbors(v) for v in range(t.n)])


def neighbors(t: Topology, v: int) -> frozenset[int]:
    return t.neighbors(v)


@dataclass(frozen=True)
class MisViolation:
    kind: str  # "independence" | "maximality"
    witness: tuple[int, ...]

    def __str__(self):
        if self.kind == "independence":
            return f"adjacent leaders {self.witness[0]} and {self.witness[1]}"
        return f"vertex {self.witness[0]} is neither a leader nor next to one"


def validate_mis(t: Topology, leaders: Iterable[int]) -> Optional[MisViolation]:
    leaders = set(leaders)
    for u, v in sorted(t.edges):
        if u in leaders and v in leaders:
            return MisViolation("independence", (u, v))
    for v in range(t.n):
        if v not in leaders and not (t.neighbors(v) & leaders):
            return MisViolation("maximality", (v,))
    return None
