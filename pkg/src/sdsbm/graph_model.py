"""Typed dynamic networks and their block-level edge-count series.

A dynamic network is an ordered sequence of undirected, simple graph
snapshots over a fixed vertex set.  Every vertex carries one of k type
labels, and each unordered pair of labels (a, b) with a <= b defines a
*block*: the set of vertex pairs whose edge count the model tracks
through time.  All types here are immutable after construction and all
operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

TypePair = tuple[str, str]


@dataclass(frozen=True)
class VertexTyping:
    """Assignment of exactly one type label to every vertex.

    ``vertex_ids`` fixes the canonical vertex order (used to normalise
    undirected edges) and the lexicographic order of type labels fixes
    the canonical block order, so block identities are stable across
    runs.
    """

    vertex_ids: tuple[str, ...]
    type_of: Mapping[str, str]

    def __post_init__(self) -> None:
        if len(self.vertex_ids) == 0:
            raise ValueError("typing needs at least one vertex")
        if len(set(self.vertex_ids)) != len(self.vertex_ids):
            raise ValueError("duplicate vertex ids in typing")
        missing = [v for v in self.vertex_ids if v not in self.type_of]
        if missing:
            raise ValueError(f"vertices without a type label: {missing[:5]}")
        extra = set(self.type_of) - set(self.vertex_ids)
        if extra:
            raise ValueError(f"type labels for unknown vertices: {sorted(extra)[:5]}")

    @property
    def types(self) -> tuple[str, ...]:
        """Type labels in canonical (lexicographic) order."""
        return tuple(sorted(set(self.type_of.values())))

    def members(self, label: str) -> tuple[str, ...]:
        return tuple(v for v in self.vertex_ids if self.type_of[v] == label)

    def size(self, label: str) -> int:
        return sum(1 for v in self.vertex_ids if self.type_of[v] == label)

    def pairs(self) -> tuple[TypePair, ...]:
        """All unordered type pairs (a, b) with a <= b, in canonical order."""
        labels = self.types
        return tuple(
            (labels[i], labels[j])
            for i in range(len(labels))
            for j in range(i, len(labels))
        )

    def canonical_pair(self, u: str, v: str) -> TypePair:
        a, b = self.type_of[u], self.type_of[v]
        return (a, b) if a <= b else (b, a)

    def vertex_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.vertex_ids)}


def possible_edges(size_a: int, size_b: int, same_type: bool) -> int:
    """Number of possible undirected edges in a block.

    ``size_a * (size_a - 1) / 2`` within one type (no self-loops),
    ``size_a * size_b`` across two types.
    """
    if size_a < 1 or size_b < 1:
        raise ValueError("block sizes must be >= 1 (a typeless block has no series)")
    if same_type:
        if size_a != size_b:
            raise ValueError("same-type block must have equal sizes")
        return size_a * (size_a - 1) // 2
    return size_a * size_b


def pair_possible_edges(typing: VertexTyping, pair: TypePair) -> int:
    a, b = pair
    if a == b:
        return possible_edges(typing.size(a), typing.size(a), same_type=True)
    return possible_edges(typing.size(a), typing.size(b), same_type=False)


@dataclass(frozen=True)
class DynamicNetwork:
    """Sequence of undirected simple-graph snapshots over one vertex set.

    Each snapshot is a frozenset of edges ``(u, v)`` normalised so that
    ``u`` precedes ``v`` in the typing's vertex order.  ``missing``
    holds 1-based snapshot indices for which no observation exists (as
    opposed to an observed empty graph); those propagate as NaN counts.
    """

    typing: VertexTyping
    snapshots: tuple[frozenset[tuple[str, str]], ...]
    missing: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        index = self.typing.vertex_index()
        normalised = []
        for t, snap in enumerate(self.snapshots, start=1):
            edges = set()
            for u, v in snap:
                if u == v:
                    raise ValueError(f"self-loop on vertex {u!r} in snapshot {t}")
                if u not in index or v not in index:
                    unknown = u if u not in index else v
                    raise ValueError(f"edge endpoint {unknown!r} not in typing")
                edges.add((u, v) if index[u] < index[v] else (v, u))
            normalised.append(frozenset(edges))
        object.__setattr__(self, "snapshots", tuple(normalised))
        bad = [t for t in self.missing if not 1 <= t <= len(self.snapshots)]
        if bad:
            raise ValueError(f"missing indices out of range: {sorted(bad)}")
        for t in self.missing:
            if self.snapshots[t - 1]:
                raise ValueError(f"snapshot {t} marked missing but has edges")

    @property
    def T(self) -> int:
        return len(self.snapshots)

    def total_edges(self, t: int) -> int:
        """Edge count of snapshot t (1-based)."""
        return len(self.snapshots[t - 1])


@dataclass(frozen=True)
class BlockSeries:
    """Per-block possible-edge count and formed-edge counts through time.

    ``counts`` is a float vector so missing observations can be carried
    as NaN; all present values are integers in ``[0, n]``.
    """

    pair: TypePair
    n: int
    counts: np.ndarray

    def __post_init__(self) -> None:
        a, b = self.pair
        if not a <= b:
            raise ValueError(f"block pair {self.pair} not in canonical (a <= b) order")
        if self.n < 0:
            raise ValueError("possible-edge count must be >= 0")
        counts = np.asarray(self.counts, dtype=float)
        present = counts[~np.isnan(counts)]
        if present.size:
            if present.min() < 0 or present.max() > self.n:
                raise ValueError(f"counts outside [0, {self.n}] for block {self.pair}")
            if np.any(present != np.floor(present)):
                raise ValueError(f"non-integer counts for block {self.pair}")
        object.__setattr__(self, "counts", counts)

    @property
    def T(self) -> int:
        return int(self.counts.shape[0])

    def observed_mask(self) -> np.ndarray:
        return ~np.isnan(self.counts)


def extract_block_series(network: DynamicNetwork) -> list[BlockSeries]:
    """Decompose a dynamic network into one count series per type pair.

    Every unordered type pair (including a = b) yields a series, in
    canonical block order; each undirected edge is counted once.
    Missing snapshots become NaN counts in every block.
    """
    typing = network.typing
    pairs = typing.pairs()
    counts = {p: np.zeros(network.T) for p in pairs}
    for t, snap in enumerate(network.snapshots):
        for u, v in snap:
            counts[typing.canonical_pair(u, v)][t] += 1
    for t in network.missing:
        for p in pairs:
            counts[p][t - 1] = np.nan
    return [
        BlockSeries(pair=p, n=pair_possible_edges(typing, p), counts=counts[p])
        for p in pairs
    ]


def block_pairs(typing: VertexTyping, pair: TypePair) -> list[tuple[str, str]]:
    """All possible vertex pairs of a block, in canonical order."""
    a, b = pair
    if a == b:
        mem = typing.members(a)
        return [(mem[i], mem[j]) for i in range(len(mem)) for j in range(i + 1, len(mem))]
    return [(u, v) for u in typing.members(a) for v in typing.members(b)]
