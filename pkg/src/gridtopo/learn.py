"""Topology learning when every node's voltage magnitude is observed.

Edge weights are variances of voltage-magnitude differences. Under
node-independent injections, the operational tree is the minimum-weight
spanning tree of the candidate layout with these weights, subject to the
substation having a single line.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InfeasibleError
from .grid import ROOT, GridGraph, RadialTree, edge_key
from .lcpf import InjectionStats, SampleSet, exact_voltage_moments


@dataclass(frozen=True)
class PhiWeights:
    """Symmetric matrix of pairwise weights labelled by ``nodes``.

    ``matrix[i, j]`` is the weight between ``nodes[i]`` and ``nodes[j]``. The
    root, when present, sits at position 0 and behaves as a node with
    ``eps == 0``.
    """

    nodes: tuple[int, ...]
    matrix: np.ndarray
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(int(n) for n in self.nodes)
        mat = np.asarray(self.matrix, dtype=float)
        if mat.shape != (len(nodes), len(nodes)):
            raise DomainError(f"weight matrix shape {mat.shape} does not match {len(nodes)} nodes")
        if ROOT in nodes and nodes[0] != ROOT:
            raise DomainError("the root must come first in the node list")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "index", {n: i for i, n in enumerate(nodes)})

    def __call__(self, a: int, b: int) -> float:
        try:
            return float(self.matrix[self.index[a], self.index[b]])
        except KeyError as exc:
            raise DomainError(f"no weight for node {exc.args[0]}") from None

    def restrict(self, nodes: Sequence[int]) -> "PhiWeights":
        idx = [self.index[n] for n in nodes]
        return PhiWeights(tuple(nodes), self.matrix[np.ix_(idx, idx)])

    def transformed(self, fn) -> "PhiWeights":
        """Apply ``fn`` elementwise to the off-diagonal weights."""
        mat = fn(self.matrix)
        np.fill_diagonal(mat, 0.0)
        return PhiWeights(self.nodes, mat)


@dataclass(frozen=True)
class LearnedTopology:
    """Spanning tree returned by the learners.

    ``edges`` are canonical ``(min, max)`` pairs in ascending order and
    ``edge_weights`` maps each to the weight used to select it.
    """

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    edge_weights: dict = field(compare=False)
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def weight_total(self) -> float:
        """Sum of edge weights; edges without a measured weight (NaN) are skipped."""
        return float(np.nansum(list(self.edge_weights.values())))

    @property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)

    def to_tree(self, grid: GridGraph) -> RadialTree:
        """Orient the learned edges as a :class:`RadialTree` using impedances from ``grid``."""
        edges = []
        for u, v in self.edges:
            z = grid.impedance(u, v)
            if z is None:
                raise DomainError(f"learned edge ({u}, {v}) is not a candidate edge of the grid")
            edges.append((u, v, z))
        return RadialTree.from_edges(grid.num_nodes, edges)


def empirical_phi(samples: SampleSet, nodes: Sequence[int] | None = None) -> PhiWeights:
    """Unbiased sample variance of ``eps_a - eps_b`` for every pair of nodes.

    The returned weights cover the root plus ``nodes`` (default: every node
    in ``samples``). Each pair is computed from its own difference column, so
    the result is exactly symmetric and exactly zero for identical columns.
    """
    if samples.num_samples < 2:
        raise DomainError("at least two samples are needed to estimate a variance")
    if nodes is None:
        nodes = samples.nodes
    sub = samples.restrict([n for n in nodes if n != ROOT])
    x = np.hstack([np.zeros((sub.num_samples, 1)), sub.eps])
    n = x.shape[1]
    mat = np.zeros((n, n))
    for i in range(n - 1):
        col = np.var(x[:, i : i + 1] - x[:, i + 1 :], axis=0, ddof=1)
        mat[i, i + 1 :] = col
        mat[i + 1 :, i] = col
    return PhiWeights((ROOT,) + sub.nodes, mat)


def exact_phi_weights(tree: RadialTree, stats: InjectionStats, nodes: Sequence[int] | None = None) -> PhiWeights:
    """Population weights from the exact voltage covariance of ``tree`` under ``stats``."""
    omega = exact_voltage_moments(tree, stats).omega_eps
    n = tree.num_nodes
    full = np.zeros((n, n))
    full[1:, 1:] = omega
    d = np.diag(full)
    mat = d[:, None] + d[None, :] - 2.0 * full
    np.fill_diagonal(mat, 0.0)
    weights = PhiWeights(tuple(range(n)), mat)
    if nodes is None:
        return weights
    return weights.restrict((ROOT,) + tuple(sorted(set(nodes) - {ROOT})))


class UnionFind:
    def __init__(self, items: Iterable[int]):
        self.parent = {i: i for i in items}
        self.size = {i: 1 for i in self.parent}

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


def _pairs(candidate_edges) -> list[tuple[int, int]]:
    out = set()
    for e in candidate_edges:
        out.add(edge_key(int(e[0]), int(e[1])))
    return sorted(out)


def complete_edges(nodes: Sequence[int]) -> list[tuple[int, int]]:
    return [edge_key(a, b) for a, b in itertools.combinations(sorted(nodes), 2)]


def constrained_mst(candidate_edges, weights: PhiWeights, root: int = ROOT) -> LearnedTopology:
    """Minimum-weight spanning tree in which ``root`` has exactly one edge.

    Kruskal's algorithm spans the non-root nodes with non-root edges; the root
    is then attached through its cheapest candidate edge. Any spanning tree
    with root degree one decomposes this way, so the result is optimal.
    Ties are broken by ``(weight, smaller id, larger id)``.
    """
    nodes = weights.nodes
    if root not in weights.index:
        raise DomainError(f"root {root} has no weights")
    pairs = _pairs(candidate_edges)
    for u, v in pairs:
        if u not in weights.index or v not in weights.index:
            raise DomainError(f"candidate edge ({u}, {v}) touches a node without weights")

    inner = [(weights(u, v), u, v) for u, v in pairs if root not in (u, v)]
    inner.sort()
    uf = UnionFind(n for n in nodes if n != root)
    chosen: dict[tuple[int, int], float] = {}
    for w, u, v in inner:
        if uf.union(u, v):
            chosen[(u, v)] = w
    if len(chosen) != len(nodes) - 2:
        raise InfeasibleError("non-root nodes cannot be spanned without the root")

    root_edges = [(weights(u, v), v if u == root else u) for u, v in pairs if root in (u, v)]
    if not root_edges:
        raise InfeasibleError("no candidate edge touches the root")
    w, b = min(root_edges)
    chosen[edge_key(root, b)] = w
    return LearnedTopology(nodes=tuple(sorted(nodes)), edges=tuple(sorted(chosen)), edge_weights=chosen)


def learn_topology(samples: SampleSet, grid: GridGraph, complete_graph: bool = False) -> LearnedTopology:
    """Operational tree from voltage-magnitude samples at every non-root node.

    Only ``grid.candidate_edges`` are considered unless ``complete_graph`` is
    set, in which case every node pair is a candidate. Line impedances are
    not used.
    """
    nodes = list(range(1, grid.num_nodes))
    missing = sorted(set(nodes) - set(samples.nodes))
    if missing:
        raise DomainError(f"samples do not cover nodes {missing}")
    weights = empirical_phi(samples, nodes)
    cands = complete_edges(range(grid.num_nodes)) if complete_graph else grid.edge_keys()
    return constrained_mst(cands, weights, ROOT)


def cycle_gaps(topology: LearnedTopology, candidate_edges, weights: PhiWeights, root: int = ROOT) -> list[dict]:
    """How narrowly each excluded candidate edge lost, smallest margin first.

    For a non-root edge the margin is its weight minus the heaviest learned
    edge on the cycle it would close. An excluded root edge competes only
    with the chosen root edge.
    """
    adj: dict[int, list[int]] = {n: [] for n in topology.nodes}
    for u, v in topology.edges:
        adj[u].append(v)
        adj[v].append(u)
    root_edge = next((e for e in topology.edges if root in e), None)

    def heaviest_on_path(s, t):
        prev = {s: None}
        stack = [s]
        while stack:
            n = stack.pop()
            for m in adj[n]:
                if m not in prev:
                    prev[m] = n
                    stack.append(m)
        best, arg = -np.inf, None
        n = t
        while prev[n] is not None:
            k = edge_key(n, prev[n])
            if topology.edge_weights[k] > best:
                best, arg = topology.edge_weights[k], k
            n = prev[n]
        return best, arg

    out = []
    for u, v in _pairs(candidate_edges):
        if (u, v) in topology.edge_weights:
            continue
        w = weights(u, v)
        if root in (u, v):
            rival = root_edge
            rw = topology.edge_weights[rival]
        else:
            rw, rival = heaviest_on_path(u, v)
        out.append({"excluded": (u, v), "weight": w, "rival": rival, "gap": w - rw})
    out.sort(key=lambda d: d["gap"])
    return out


def partition_into_trees(
    weights: PhiWeights, variances: Sequence[float] | None = None, tolerance: float = 0.1
) -> list[list[int]]:
    """Split non-root nodes into groups that appear to share a tree.

    Nodes on disjoint trees have independent voltages, so their weight is
    the sum of their variances. Two nodes are linked when their weight falls
    below ``(1 - tolerance)`` times that sum; groups are the connected
    components of the links. ``variances`` is aligned with ``weights.nodes``
    and defaults to the weights to the root.
    """
    nodes = [n for n in weights.nodes if n != ROOT]
    if variances is None:
        if ROOT not in weights.index:
            raise DomainError("variances are required when the weights have no root")
        var = {n: weights(ROOT, n) for n in nodes}
    else:
        var = {n: float(v) for n, v in zip(weights.nodes, variances)}
    uf = UnionFind(nodes)
    for a, b in itertools.combinations(nodes, 2):
        if weights(a, b) < (1.0 - tolerance) * (var[a] + var[b]):
            uf.union(a, b)
    groups: dict[int, list[int]] = {}
    for n in nodes:
        groups.setdefault(uf.find(n), []).append(n)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def topology_error(estimated: LearnedTopology, truth: RadialTree) -> float:
    """Fraction of true edges missing from the estimate."""
    if set(estimated.nodes) != set(range(truth.num_nodes)):
        raise DomainError("estimated and true topologies cover different node sets")
    truth_edges = truth.edge_set
    return len(estimated.edge_set - truth_edges) / len(truth_edges)


def tree_as_topology(tree: RadialTree, weights: PhiWeights | None = None) -> LearnedTopology:
    keys = tree.edge_keys()
    ew = {k: (weights(*k) if weights is not None else 0.0) for k in keys}
    return LearnedTopology(nodes=tuple(range(tree.num_nodes)), edges=tuple(keys), edge_weights=ew)
