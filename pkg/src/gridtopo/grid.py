"""Feeder graphs, radial trees and the path-sum form of the inverse reduced Laplacian.

Node 0 is the substation (root) everywhere in this package. Non-root node ``a``
occupies row/column ``a - 1`` of every reduced-system matrix or vector.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import DomainError

ROOT = 0

WeightKind = Literal["resistance", "reactance"]


def edge_key(u: int, v: int) -> tuple[int, int]:
    """Canonical (smaller, larger) form of an undirected edge."""
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Impedance:
    """Per-unit series impedance ``r + i x`` of a line."""

    r: float
    x: float

    def __post_init__(self):
        if not (self.r > 0 and self.x > 0):
            raise DomainError(f"impedance must have r > 0 and x > 0, got r={self.r}, x={self.x}")

    def part(self, kind: WeightKind) -> float:
        if kind == "resistance":
            return self.r
        if kind == "reactance":
            return self.x
        raise DomainError(f"unknown weight kind {kind!r}")


Edge = tuple[int, int, Impedance]


def _check_nodes(num_nodes: int, edges: Iterable[Edge]) -> list[Edge]:
    edges = list(edges)
    seen = set()
    for u, v, z in edges:
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise DomainError(f"edge ({u}, {v}) references a node outside 0..{num_nodes - 1}")
        if u == v:
            raise DomainError(f"self-loop at node {u}")
        k = edge_key(u, v)
        if k in seen:
            raise DomainError(f"duplicate edge {k}")
        seen.add(k)
        if not isinstance(z, Impedance):
            raise DomainError(f"edge {k} has no Impedance")
    return edges


def _components(num_nodes: int, pairs: Iterable[tuple[int, int]]) -> int:
    adj = [[] for _ in range(num_nodes)]
    for u, v in pairs:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * num_nodes
    count = 0
    for s in range(num_nodes):
        if seen[s]:
            continue
        count += 1
        seen[s] = True
        stack = [s]
        while stack:
            n = stack.pop()
            for m in adj[n]:
                if not seen[m]:
                    seen[m] = True
                    stack.append(m)
    return count


@dataclass(frozen=True)
class GridGraph:
    """Loopy candidate layout of a feeder.

    ``operational`` optionally records which candidate edges are closed in the
    ground truth. It exists for scoring; learners never read it.
    """

    num_nodes: int
    candidate_edges: tuple[Edge, ...]
    root: int = ROOT
    operational: frozenset[tuple[int, int]] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.root != ROOT:
            raise DomainError("the substation must be node 0")
        if self.num_nodes < 2:
            raise DomainError("a grid needs at least two nodes")
        edges = tuple(_check_nodes(self.num_nodes, self.candidate_edges))
        object.__setattr__(self, "candidate_edges", edges)
        if _components(self.num_nodes, ((u, v) for u, v, _ in edges)) != 1:
            raise DomainError("candidate edge set is not connected")
        if self.operational is not None:
            op = frozenset(edge_key(u, v) for u, v in self.operational)
            unknown = op - set(self.impedances)
            if unknown:
                raise DomainError(f"operational edges {sorted(unknown)} are not candidate edges")
            object.__setattr__(self, "operational", op)

    @cached_property
    def impedances(self) -> dict[tuple[int, int], Impedance]:
        return {edge_key(u, v): z for u, v, z in self.candidate_edges}

    def impedance(self, u: int, v: int) -> Impedance | None:
        return self.impedances.get(edge_key(u, v))

    def has_edge(self, u: int, v: int) -> bool:
        return edge_key(u, v) in self.impedances

    def edge_keys(self) -> list[tuple[int, int]]:
        return sorted(self.impedances)

    def operational_tree(self) -> "RadialTree":
        """Ground-truth tree built from the ``operational`` flags."""
        if self.operational is None:
            raise DomainError("grid carries no operational flags")
        return RadialTree.from_edges(
            self.num_nodes, [(u, v, self.impedances[(u, v)]) for u, v in sorted(self.operational)]
        )


class RadialTree:
    """Spanning tree oriented away from the root, with the root of degree one.

    Construct with :meth:`from_edges`; the constructor validates every
    structural invariant and raises :class:`DomainError` otherwise.
    """

    def __init__(self, num_nodes: int, edges: Sequence[Edge]):
        if num_nodes < 2:
            raise DomainError("a radial tree needs at least two nodes")
        edges = _check_nodes(num_nodes, edges)
        if len(edges) != num_nodes - 1:
            raise DomainError(f"a spanning tree on {num_nodes} nodes has {num_nodes - 1} edges, got {len(edges)}")
        adj: list[list[tuple[int, Impedance]]] = [[] for _ in range(num_nodes)]
        for u, v, z in edges:
            adj[u].append((v, z))
            adj[v].append((u, z))
        if len(adj[ROOT]) != 1:
            raise DomainError(f"root must have degree 1, has degree {len(adj[ROOT])}")

        parent = np.full(num_nodes, -1, dtype=np.int64)
        r_up = np.zeros(num_nodes)
        x_up = np.zeros(num_nodes)
        depth = np.zeros(num_nodes, dtype=np.int64)
        children: list[list[int]] = [[] for _ in range(num_nodes)]
        seen = np.zeros(num_nodes, dtype=bool)
        seen[ROOT] = True
        order = [ROOT]
        queue = deque([ROOT])
        while queue:
            n = queue.popleft()
            for m, z in sorted(adj[n], key=lambda t: t[0]):
                if seen[m]:
                    continue
                seen[m] = True
                parent[m] = n
                r_up[m], x_up[m] = z.r, z.x
                depth[m] = depth[n] + 1
                children[n].append(m)
                order.append(m)
                queue.append(m)
        if not seen.all():
            raise DomainError("edges do not connect every node (the edge set has a cycle)")

        self.num_nodes = num_nodes
        self.edges = tuple((int(m), int(parent[m]), Impedance(r_up[m], x_up[m])) for m in order[1:])
        self.parent = parent
        self.r_up = r_up
        self.x_up = x_up
        self.order = tuple(order)
        self.children = tuple(tuple(c) for c in children)
        self.depth = depth

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[Edge]) -> "RadialTree":
        return cls(num_nodes, list(edges))

    def __repr__(self):
        return f"RadialTree(num_nodes={self.num_nodes}, edges={self.edge_keys()})"

    def __eq__(self, other):
        return isinstance(other, RadialTree) and self.edge_set == other.edge_set and self.num_nodes == other.num_nodes

    def __hash__(self):
        return hash((self.num_nodes, self.edge_set))

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(edge_key(u, v) for u, v, _ in self.edges)

    def edge_keys(self) -> list[tuple[int, int]]:
        return sorted(self.edge_set)

    def up_weights(self, kind: WeightKind) -> np.ndarray:
        """Impedance part of the edge from each node to its parent (0 at the root)."""
        if kind == "resistance":
            return self.r_up
        if kind == "reactance":
            return self.x_up
        raise DomainError(f"unknown weight kind {kind!r}")

    @cached_property
    def ancestor_matrix(self) -> np.ndarray:
        """Boolean ``A[c, d]``: node ``d`` is a descendant of ``c`` (``c`` itself included)."""
        n = self.num_nodes
        # rows built as "is d below c" via the ancestor chain of d
        below = np.zeros((n, n), dtype=bool)
        for d in self.order:
            p = self.parent[d]
            if p >= 0:
                below[:, d] = below[:, p]
            below[d, d] = True
        return below

    @cached_property
    def hinv_r(self) -> np.ndarray:
        return reduced_laplacian_inverse(self, "resistance")

    @cached_property
    def hinv_x(self) -> np.ndarray:
        return reduced_laplacian_inverse(self, "reactance")

    def _check(self, a: int):
        if not (isinstance(a, (int, np.integer)) and 0 <= a < self.num_nodes):
            raise DomainError(f"node {a!r} is not in the tree")


def path_to_root(tree: RadialTree, a: int) -> list[tuple[int, int]]:
    """Edges ``(child, parent)`` on the unique path from ``a`` up to the root."""
    tree._check(a)
    path = []
    while a != ROOT:
        p = int(tree.parent[a])
        path.append((int(a), p))
        a = p
    return path


def descendants(tree: RadialTree, a: int) -> frozenset[int]:
    """Nodes whose root path passes through ``a``, including ``a``."""
    tree._check(a)
    return frozenset(int(d) for d in np.flatnonzero(tree.ancestor_matrix[a]))


def reduced_laplacian_inverse(tree: RadialTree, weight_kind: WeightKind = "resistance") -> np.ndarray:
    """Inverse of the reduced weighted Laplacian, built from shared root-path sums.

    Entry ``(a-1, b-1)`` is the total resistance (or reactance) of the edges
    common to the root paths of ``a`` and ``b``. Row ``c`` equals row ``parent(c)``
    plus ``r_c`` on the columns of ``c``'s descendants, which gives an O(N^2)
    sweep in breadth-first order.
    """
    w = tree.up_weights(weight_kind)
    n = tree.num_nodes
    below = tree.ancestor_matrix
    full = np.zeros((n, n))
    for c in tree.order[1:]:
        full[c] = full[tree.parent[c]]
        full[c, below[c]] += w[c]
    return full[1:, 1:].copy()


def h_inverse_difference(tree: RadialTree, a: int, b: int, c: int, weight_kind: WeightKind = "resistance") -> float:
    """``Hinv(a, c) - Hinv(b, c)`` for a tree edge with ``b`` the parent of ``a``.

    Equals the edge's resistance (reactance) when ``c`` lies below ``a`` and
    zero otherwise.
    """
    tree._check(a)
    tree._check(b)
    tree._check(c)
    if a == ROOT or tree.parent[a] != b:
        raise DomainError(f"({a}, {b}) is not a tree edge with {b} as the parent")
    return float(tree.up_weights(weight_kind)[a]) if tree.ancestor_matrix[a, c] else 0.0


def dense_reduced_laplacian(tree: RadialTree, weight_kind: WeightKind = "resistance") -> np.ndarray:
    """Reduced weighted Laplacian with reciprocal impedances as edge weights."""
    w = tree.up_weights(weight_kind)
    n = tree.num_nodes
    lap = np.zeros((n, n))
    for c in tree.order[1:]:
        p = tree.parent[c]
        g = 1.0 / w[c]
        lap[c, c] += g
        lap[p, p] += g
        lap[c, p] -= g
        lap[p, c] -= g
    return lap[1:, 1:]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_radial_tree(num_nodes: int, impedance_range=(0.01, 0.1), seed=None) -> RadialTree:
    """Random tree: node 1 hangs off the root, every later node off a uniformly chosen non-root node."""
    if num_nodes < 2:
        raise DomainError("num_nodes must be at least 2")
    lo, hi = impedance_range
    if not (0 < lo <= hi):
        raise DomainError(f"impedance_range must be positive and ordered, got {impedance_range}")
    rng = _rng(seed)
    edges = [(1, ROOT, Impedance(*rng.uniform(lo, hi, size=2)))]
    for n in range(2, num_nodes):
        p = int(rng.integers(1, n))
        edges.append((n, p, Impedance(*rng.uniform(lo, hi, size=2))))
    return RadialTree.from_edges(num_nodes, edges)


def generate_random_feeder(
    num_nodes: int,
    num_extra_edges: int,
    impedance_range=(0.01, 0.1),
    seed=None,
) -> tuple[GridGraph, RadialTree]:
    """Random operational tree plus ``num_extra_edges`` open lines among non-root nodes.

    Extra edges are drawn uniformly without replacement from the non-root
    pairs that are not tree edges and get impedances from the same range as
    the operational lines. Output is a deterministic function of ``seed``.
    """
    rng = _rng(seed)
    tree = random_radial_tree(num_nodes, impedance_range, rng)
    free = [
        (u, v)
        for u in range(1, num_nodes)
        for v in range(u + 1, num_nodes)
        if (u, v) not in tree.edge_set
    ]
    if num_extra_edges < 0 or num_extra_edges > len(free):
        raise DomainError(
            f"cannot add {num_extra_edges} extra edges: only {len(free)} non-root non-tree pairs exist"
        )
    lo, hi = impedance_range
    pick = rng.choice(len(free), size=num_extra_edges, replace=False) if num_extra_edges else []
    extra = [(u, v, Impedance(*rng.uniform(lo, hi, size=2))) for u, v in (free[i] for i in sorted(pick))]
    tree_edges = [(min(u, v), max(u, v), z) for u, v, z in tree.edges]
    grid = GridGraph(
        num_nodes=num_nodes,
        candidate_edges=tuple(sorted(tree_edges + extra, key=lambda e: (e[0], e[1]))),
        operational=tree.edge_set,
    )
    return grid, tree
