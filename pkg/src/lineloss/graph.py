"""Feeder topology and the self-looped, symmetrically normalized adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, RangeError


@dataclass(frozen=True)
class FeederGraph:
    """Undirected graph over ``n_nodes`` transformer districts.

    Edges are stored as sorted ``(i, j)`` pairs with ``i < j``; self-loops are
    never stored, they are added when the adjacency is normalized.
    """

    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)
    node_labels: tuple | None = None

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ContractError("a feeder graph needs at least one node")
        for i, j in self.edges:
            if not (0 <= i < j < self.n_nodes):
                raise RangeError(f"edge ({i}, {j}) invalid for {self.n_nodes} nodes")
        if self.node_labels is not None and len(self.node_labels) != self.n_nodes:
            raise ContractError("node_labels length must equal n_nodes")

    @classmethod
    def from_edges(cls, n_nodes: int, edges, node_labels=None) -> "FeederGraph":
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i < 0 or j < 0 or i >= n_nodes or j >= n_nodes:
                raise RangeError(f"edge ({i}, {j}) out of range for {n_nodes} nodes")
            if i != j:
                canon.add((min(i, j), max(i, j)))
        labels = tuple(node_labels) if node_labels is not None else None
        return cls(n_nodes, frozenset(canon), labels)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def is_connected(self) -> bool:
        seen, todo = {0}, [0]
        adj = self.adjacency()
        while todo:
            k = todo.pop()
            for j in np.flatnonzero(adj[k]):
                if j not in seen:
                    seen.add(int(j))
                    todo.append(int(j))
        return len(seen) == self.n_nodes

    def to_text(self) -> str:
        lines = [f"n={self.n_nodes}"]
        lines += [f"{i} {j}" for i, j in sorted(self.edges)]
        return "\n".join(lines) + "\n"


def parse_topology(text: str) -> FeederGraph:
    """Parse the edge-list format: ``n=<N>`` header, then ``<i> <j>`` lines.

    Without a header the node count is max index + 1. ``#`` starts a comment line.
    """
    n_declared = None
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.replace(" ", "").startswith("n="):
            if n_declared is not None or pairs:
                raise ParseError("node-count header must come first and only once", lineno)
            try:
                n_declared = int(line.split("=", 1)[1])
            except ValueError:
                raise ParseError(f"bad node count {line!r}", lineno) from None
            if n_declared < 1:
                raise ParseError("node count must be positive", lineno)
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected '<i> <j>', got {line!r}", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer node index in {line!r}", lineno) from None
        if i < 0 or j < 0:
            raise ParseError(f"negative node index in {line!r}", lineno)
        if i == j:
            raise ParseError(f"self-loop edge {line!r}", lineno)
        if n_declared is not None and max(i, j) >= n_declared:
            raise RangeError(f"line {lineno}: edge ({i}, {j}) out of range for n={n_declared}")
        pairs.append((i, j))
    if n_declared is None:
        if not pairs:
            raise ParseError("empty topology document")
        n_declared = max(max(p) for p in pairs) + 1
    return FeederGraph.from_edges(n_declared, pairs)


def read_topology(path) -> FeederGraph:
    return parse_topology(Path(path).read_text(encoding="utf-8"))


def normalize_adjacency(g: FeederGraph) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a_hat = g.adjacency() + np.eye(g.n_nodes)
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
