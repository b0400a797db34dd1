"""Topology learning when some nodes' voltages are not measured.

The minimum spanning tree over observed nodes is built first; unobserved
nodes are then located by comparing measured weights with closed-form
predictions that need only line impedances and injection covariances.
Unobserved nodes must be more than two hops apart and not adjacent to the
substation.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DomainError, ReconstructionError
from .grid import ROOT, GridGraph, Impedance, RadialTree, edge_key
from .lcpf import InjectionStats
from .learn import LearnedTopology, PhiWeights, complete_edges, constrained_mst, empirical_phi

StatSum = tuple[float, float, float]


@dataclass(frozen=True)
class ObservableTree:
    """Spanning tree over observed nodes, oriented from the root."""

    topology: LearnedTopology
    parent: dict
    depth: dict

    @property
    def order(self) -> list[int]:
        """Nodes by decreasing depth (ties by id)."""
        return sorted(self.depth, key=lambda n: (-self.depth[n], n))

    def children(self, a: int) -> list[int]:
        return sorted(n for n, p in self.parent.items() if p == a)


@dataclass(frozen=True)
class NeighborhoodConfig:
    """Arrangement of a hidden node's neighbors inside the observable tree.

    ``label`` is ``"A"`` when the closest child ``c_star`` hangs off the parent
    and ``"B"`` when it reaches the parent through another child.
    """

    label: str
    hidden: int
    parent: int
    c_star: int
    to_parent: tuple[int, ...]
    to_c_star: tuple[int, ...]


def _orient(topology: LearnedTopology, root: int = ROOT) -> tuple[dict, dict]:
    adj = {n: [] for n in topology.nodes}
    for u, v in topology.edges:
        adj[u].append(v)
        adj[v].append(u)
    parent, depth = {root: None}, {root: 0}
    queue = deque([root])
    while queue:
        n = queue.popleft()
        for m in sorted(adj[n]):
            if m not in parent:
                parent[m] = n
                depth[m] = depth[n] + 1
                queue.append(m)
    return parent, depth


def observable_candidates(grid: GridGraph, hidden: Iterable[int]) -> list[tuple[int, int]]:
    """Observed pairs that can be adjacent in the observable tree.

    These are candidate lines between observed nodes plus pairs of observed
    nodes that share a hidden candidate neighbor.
    """
    hidden = set(hidden)
    out = {k for k in grid.edge_keys() if k[0] not in hidden and k[1] not in hidden}
    for h in hidden:
        nbrs = sorted({v if u == h else u for u, v in grid.edge_keys() if h in (u, v)} - hidden)
        out.update(edge_key(u, v) for i, u in enumerate(nbrs) for v in nbrs[i + 1 :])
    return sorted(out)


def observable_mst(observed, candidate_edges=None) -> ObservableTree:
    """Root-degree-one MST over the observed nodes.

    ``observed`` is either a :class:`SampleSet` (weights are estimated) or a
    :class:`PhiWeights` that already covers the root and the observed nodes.
    Every pair of observed nodes is a candidate unless ``candidate_edges`` is
    given.
    """
    weights = observed if isinstance(observed, PhiWeights) else empirical_phi(observed)
    cands = complete_edges(weights.nodes) if candidate_edges is None else candidate_edges
    topo = constrained_mst(cands, weights, ROOT)
    parent, depth = _orient(topo)
    return ObservableTree(topo, parent, depth)


def predicted_phi_edge(r: float, x: float, descendant_stats: Iterable[StatSum]) -> float:
    """Weight of a tree edge with impedance ``r + i x`` above the given descendants.

    ``descendant_stats`` holds ``(var_p, var_q, cov_pq)`` for each node below
    the edge.
    """
    total = 0.0
    for vp, vq, c in descendant_stats:
        total += r * r * vp + x * x * vq + 2.0 * r * x * c
    return total


def _sum_stats(stats: InjectionStats, nodes: Iterable[int]) -> StatSum:
    idx = [n - 1 for n in nodes if n != ROOT]
    return (float(stats.var_p[idx].sum()), float(stats.var_q[idx].sum()), float(stats.cov_pq[idx].sum()))


@dataclass(frozen=True)
class Hypothesis:
    """Assumed local structure for one weight check.

    Kind 1: ``edges = (upper,)``, ``groups = (D_child,)``.
    Kind 2: ``edges = (upper, lower)`` of a two-edge path, ``groups = (D_bottom, D_middle - D_bottom)``.
    Kind 3: ``edges = (to_first, to_second)`` from a shared parent, ``groups = (D_first, D_second)``.
    Each group is an aggregated ``(var_p, var_q, cov_pq)``. A ``None`` edge means
    the line is not a candidate, which rejects the hypothesis.
    """

    edges: tuple
    groups: tuple


def predict_statement(kind: int, hyp: Hypothesis) -> float:
    if any(z is None for z in hyp.edges):
        return float("nan")
    if kind == 1:
        (z,), (d,) = hyp.edges, hyp.groups
        return predicted_phi_edge(z.r, z.x, [d])
    if kind == 2:
        (z1, z2), (low, mid) = hyp.edges, hyp.groups
        return predicted_phi_edge(z1.r + z2.r, z1.x + z2.x, [low]) + predicted_phi_edge(z1.r, z1.x, [mid])
    if kind == 3:
        (z1, z2), (d1, d2) = hyp.edges, hyp.groups
        return predicted_phi_edge(z1.r, z1.x, [d1]) + predicted_phi_edge(z2.r, z2.x, [d2])
    raise DomainError(f"unknown statement kind {kind}")


def check_statement(kind: int, observed_phi: float, hypothesis: Hypothesis, tolerance: float) -> tuple[float, bool]:
    """Relative mismatch between a measured weight and the hypothesis' prediction."""
    pred = predict_statement(kind, hypothesis)
    if not np.isfinite(pred) or pred <= 0:
        return float("inf"), False
    score = abs(observed_phi - pred) / pred
    return score, score <= tolerance


def tree_distances_from(tree: RadialTree, source: int, limit: int | None = None) -> dict[int, int]:
    adj = [[] for _ in range(tree.num_nodes)]
    for u, v, _ in tree.edges:
        adj[u].append(v)
        adj[v].append(u)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        n = queue.popleft()
        if limit is not None and dist[n] >= limit:
            continue
        for m in adj[n]:
            if m not in dist:
                dist[m] = dist[n] + 1
                queue.append(m)
    return dist


def satisfies_assumption2(tree: RadialTree, hidden: Iterable[int]) -> bool:
    """Hidden nodes are non-root, not adjacent to the root, and pairwise more than two hops apart."""
    hidden = set(hidden)
    for h in hidden:
        if h == ROOT or tree.parent[h] == ROOT:
            return False
        near = tree_distances_from(tree, h, limit=2)
        if any(o in near for o in hidden if o != h):
            return False
    return True


def place_hidden_nodes(tree: RadialTree, count: int, seed=None, max_tries: int = 200) -> frozenset[int]:
    """Random hidden set of size ``count`` respecting the spacing rule, by randomized greedy placement."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    eligible = [n for n in range(1, tree.num_nodes) if tree.parent[n] != ROOT]
    if count == 0:
        return frozenset()
    for _ in range(max_tries):
        chosen: list[int] = []
        blocked: set[int] = set()
        for n in rng.permutation(eligible):
            n = int(n)
            if n in blocked:
                continue
            chosen.append(n)
            blocked.update(tree_distances_from(tree, n, limit=2))
            if len(chosen) == count:
                assert satisfies_assumption2(tree, chosen)
                return frozenset(chosen)
    raise DomainError(f"could not place {count} hidden nodes more than two hops apart")


class _Reconstruction:
    """Mutable state of one missing-data reconstruction."""

    def __init__(self, obs: ObservableTree, weights: PhiWeights, grid: GridGraph, hidden, stats, tolerance, policy):
        if policy not in ("fail", "best"):
            raise DomainError(f"unknown mismatch policy {policy!r}")
        self.policy = policy
        self.weights = weights
        self.grid = grid
        self.stats = stats
        self.tol = tolerance
        self.parent = dict(obs.parent)
        self.missing = set(hidden)
        self.proxy: dict[int, int] = {}
        self.acc: dict[int, set[int]] = {n: {n} for n in list(obs.parent) + list(hidden)}
        self.edges: set[tuple[int, int]] = set()
        self.log: list[dict] = []
        self.ambiguous: list[dict] = []

    def z(self, u, v) -> Impedance | None:
        return self.grid.impedance(u, v)

    def s(self, nodes) -> StatSum:
        return _sum_stats(self.stats, nodes)

    def children(self, a):
        return sorted(n for n, p in self.parent.items() if p == a)

    def depth(self):
        kids: dict[int, list[int]] = {}
        for n, p in self.parent.items():
            if p is not None:
                kids.setdefault(p, []).append(n)
        depth = {ROOT: 0}
        queue = deque([ROOT])
        while queue:
            n = queue.popleft()
            for m in kids.get(n, ()):
                depth[m] = depth[n] + 1
                queue.append(m)
        return depth, kids

    def fail(self, message, a=None, children=()):
        raise ReconstructionError(
            message,
            partial_edges=sorted(self.edges),
            node=a,
            children=children,
            diagnostics={"steps": self.log, "ambiguous": self.ambiguous, "missing": sorted(self.missing)},
        )

    def _best(self, scored, a, what):
        """Lowest-score option, or ``None`` when nothing is finite."""
        scored = sorted((t for t in scored if np.isfinite(t[0])), key=lambda t: t[0])
        within = [t for t in scored if t[0] <= self.tol]
        if len(within) > 1:
            self.ambiguous.append({"node": a, "check": what, "scores": [float(t[0]) for t in within]})
        return scored[0] if scored else None

    def remove(self, nodes):
        for n in nodes:
            self.parent.pop(n, None)
            self.proxy.pop(n, None)

    def direct_options(self, a, b):
        """Edge ``(a, b)`` alone, or with an unobserved leaf hanging below ``b``."""
        phi = self.weights(a, b)
        z_ab = self.z(a, b)
        scored = [(check_statement(1, phi, Hypothesis((z_ab,), (self.s(self.acc[b]),)), self.tol)[0], None)]
        for h in sorted(self.missing - set(self.proxy.values())):
            if self.z(b, h) is None:
                continue
            hyp = Hypothesis((z_ab,), (self.s(self.acc[b] | {h}),))
            scored.append((check_statement(1, phi, hyp, self.tol)[0], h))
        return scored

    def commit_direct(self, a, b, score, h):
        self.edges.add(edge_key(a, b))
        self.acc[a] |= self.acc[b]
        if h is not None:
            self.edges.add(edge_key(b, h))
            self.acc[a].add(h)
            self.missing.discard(h)
        self.remove([b])
        self.log.append({"node": a, "child": b, "check": 1, "hidden": h, "score": float(score)})

    def group_options(self, a, rest):
        """Scores for a hidden node between ``a`` and ``rest`` and for one above both."""
        proxied = {self.proxy[c] for c in rest if c in self.proxy}
        if len(proxied) > 1:
            if self.policy == "fail":
                self.fail(f"node {a} borders several unresolved hidden nodes", a, rest)
            return [], []
        # a stand-in child pins the hidden node; otherwise any unattached one may fit
        candidates = sorted(proxied) if proxied else sorted(self.missing - set(self.proxy.values()))
        plain = [c for c in rest if c not in self.proxy]

        between = []
        for h in candidates:
            z_ah = self.z(a, h)
            if z_ah is None or any(self.z(h, c) is None for c in plain):
                continue
            below = set(self.acc[h]) | {h}
            for c in rest:
                below |= self.acc[c]
            scores = []
            for c in rest:
                hyp = Hypothesis((z_ah, self.z(h, c)), (self.s(self.acc[c]), self.s(below - self.acc[c])))
                scores.append(check_statement(2, self.weights(a, c), hyp, self.tol)[0])
            between.append((float(np.mean(scores)), h, below))

        above = []
        if a != ROOT:
            for h in candidates:
                z_ha = self.z(h, a)
                if z_ha is None or any(self.z(h, c) is None for c in plain):
                    continue
                scores = []
                for c in rest:
                    hyp = Hypothesis((z_ha, self.z(h, c)), (self.s(self.acc[a]), self.s(self.acc[c])))
                    scores.append(check_statement(3, self.weights(a, c), hyp, self.tol)[0])
                above.append((float(np.mean(scores)), h))
        return between, above

    def commit_between(self, a, rest, score, h, below):
        self.edges.add(edge_key(a, h))
        self.edges.update(edge_key(h, c) for c in rest if c not in self.proxy)
        self.acc[a] |= below
        self.missing.discard(h)
        self.remove(rest)
        self.log.append({"node": a, "children": list(rest), "check": 2, "hidden": h, "score": float(score)})

    def commit_above(self, a, rest, score, h):
        self.edges.add(edge_key(h, a))
        self.edges.update(edge_key(h, c) for c in rest if c not in self.proxy)
        self.acc[h] |= self.acc[a]
        for c in rest:
            self.acc[h] |= self.acc[c]
        self.remove(rest)
        self.proxy[a] = h
        self.log.append({"node": a, "children": list(rest), "check": 3, "hidden": h, "score": float(score)})

    def resolve(self, a, children):
        rest, fallback = [], {}
        for b in children:
            if b in self.proxy:
                rest.append(b)
                continue
            best = self._best(self.direct_options(a, b), a, "edge")
            if best is not None and best[0] <= self.tol:
                self.commit_direct(a, b, *best)
            else:
                rest.append(b)
                if best is not None:
                    fallback[b] = best
        while rest:
            between, above = self.group_options(a, rest)
            bb = self._best(between, a, "between")
            if bb is not None and bb[0] <= self.tol:
                self.commit_between(a, rest, *bb)
                return
            ba = self._best(above, a, "above")
            if ba is not None and ba[0] <= self.tol:
                self.commit_above(a, rest, *ba)
                return
            if self.policy == "fail":
                self.fail(f"no hypothesis explains the neighborhood of node {a}", a, rest)
            options = [(s, "direct", b, h) for b, (s, h) in fallback.items() if b in rest]
            if bb is not None:
                options.append((bb[0], "between", bb))
            if ba is not None:
                options.append((ba[0], "above", ba))
            if not options:
                self.commit_unexplained(a, rest)
                return
            pick = min(options, key=lambda t: t[0])
            if pick[1] == "direct":
                _, _, b, h = pick
                self.commit_direct(a, b, pick[0], h)
                rest.remove(b)
            elif pick[1] == "between":
                self.commit_between(a, rest, *pick[2])
                return
            else:
                self.commit_above(a, rest, *pick[2])
                return

    def commit_unexplained(self, a, rest):
        """Keep the observable-tree edges below ``a`` when no hypothesis can even be formed.

        Happens with sampled weights after an earlier step used up the hidden
        node this neighborhood needs; the edges are kept so the result stays
        a spanning tree and the mistake is scored rather than dropped.
        """
        for c in rest:
            h = self.proxy.get(c)
            self.edges.add(edge_key(a, c if h is None else h))
            self.missing.discard(h)
            self.acc[a] |= self.acc[c]
        self.remove(rest)
        self.log.append({"node": a, "children": list(rest), "check": None, "hidden": None, "score": None})

    def place_leftover_leaves(self):
        """Attach hidden nodes no check claimed as leaves below their best-fitting observed node.

        Only reached with sampled weights, when a leaf's share of its parent
        edge's weight is below the sampling noise.
        """
        upper = {x["child"]: x["node"] for x in self.log if x["check"] == 1}
        for h in sorted(self.missing):
            if h in self.proxy.values():
                self.fail(f"hidden node {h} was never attached to a parent")
            scored = []
            for b, a in upper.items():
                if self.z(b, h) is None:
                    continue
                hyp = Hypothesis((self.z(a, b),), (self.s(self.acc[b] | {h}),))
                scored.append((check_statement(1, self.weights(a, b), hyp, self.tol)[0], b, a))
            if not scored:
                self.fail(f"no candidate line can carry hidden node {h}")
            score, b, a = min(scored)
            self.edges.add(edge_key(b, h))
            self.missing.discard(h)
            self.log.append({"node": a, "child": b, "check": 1, "hidden": h, "score": float(score), "fallback": True})

    def run(self):
        while self.missing:
            depth, kids = self.depth()
            ready = [
                n for n, ch in kids.items() if ch and all(c not in kids for c in ch)
            ]
            if not ready:
                self.place_leftover_leaves()
                break
            a = min(ready, key=lambda n: (-depth[n], n))
            self.resolve(a, sorted(kids[a]))
        for n, p in self.parent.items():
            if p is not None:
                self.edges.add(edge_key(n, p))
        return self.edges


def learn_with_missing(
    samples_observed,
    grid: GridGraph,
    hidden: Iterable[int],
    all_stats: InjectionStats,
    tolerance: float = 0.25,
    mismatch_policy: str = "fail",
    candidates: str = "complete",
) -> LearnedTopology:
    """Reconstruct the full operational tree from measurements at observed nodes only.

    ``samples_observed`` is a :class:`SampleSet` (columns of hidden nodes, if
    present, are dropped) or precomputed :class:`PhiWeights` over the root and
    the observed nodes. Impedances come from ``grid`` and injection
    covariances of every node from ``all_stats``.

    With ``mismatch_policy="fail"`` a neighborhood that matches no hypothesis
    within ``tolerance`` raises :class:`ReconstructionError` carrying the
    partial edge set. ``"best"`` instead accepts the lowest-scoring
    hypothesis and records the step in ``diagnostics``.

    ``candidates="grid"`` limits the observable tree to the pairs from
    :func:`observable_candidates` instead of all observed pairs; with exact
    weights both give the same tree.
    """
    hidden = frozenset(int(h) for h in hidden)
    if ROOT in hidden:
        raise DomainError("the substation cannot be hidden")
    if any(not 0 < h < grid.num_nodes for h in hidden):
        raise DomainError("hidden node outside the grid")
    if all_stats.num_load_nodes != grid.num_nodes - 1:
        raise DomainError("statistics must cover every non-root node")
    observed = [n for n in range(1, grid.num_nodes) if n not in hidden]
    if isinstance(samples_observed, PhiWeights):
        weights = samples_observed.restrict([ROOT] + observed)
    else:
        weights = empirical_phi(samples_observed, observed)

    if candidates == "complete":
        obs = observable_mst(weights)
    elif candidates == "grid":
        obs = observable_mst(weights, observable_candidates(grid, hidden))
    else:
        raise DomainError(f"unknown candidate mode {candidates!r}")
    state = _Reconstruction(obs, weights, grid, hidden, all_stats, tolerance, mismatch_policy)
    edges = state.run()
    ew = {}
    for u, v in sorted(edges):
        ew[(u, v)] = weights(u, v) if u not in hidden and v not in hidden else float("nan")
    return LearnedTopology(
        nodes=tuple(range(grid.num_nodes)),
        edges=tuple(sorted(edges)),
        edge_weights=ew,
        diagnostics={"steps": state.log, "ambiguous": state.ambiguous},
    )


def classify_neighborhood(
    obs: ObservableTree, full_weights: PhiWeights, truth: RadialTree, b: int
) -> NeighborhoodConfig | None:
    """Configuration of hidden non-leaf ``b``'s neighbors in the observable tree, or ``None`` if neither fits.

    ``full_weights`` must include ``b`` (exact weights) to find the closest child.
    """
    a = int(truth.parent[b])
    kids = list(truth.children[b])
    if not kids:
        raise DomainError(f"node {b} is a leaf")
    c_star = min(kids, key=lambda c: (full_weights(b, c), c))
    obs_edges = obs.topology.edge_set
    group = {a, *kids}
    local = {e for e in obs_edges if e[0] in group and e[1] in group}
    for u, v in local:
        if u in kids and v in kids and c_star not in (u, v):
            return None
    others = [c for c in kids if c != c_star]
    c1 = tuple(c for c in others if full_weights(a, c) < full_weights(c_star, c))
    c2 = tuple(c for c in others if c not in c1)
    if any(edge_key(a, c) not in local for c in c1):
        return None
    if any(edge_key(c_star, c) not in local for c in c2):
        return None
    if edge_key(a, c_star) in local:
        label = "A"
    elif any(edge_key(c_star, c) in local and edge_key(a, c) in local for c in others):
        # the bridging child may come from either group
        label = "B"
    else:
        return None
    return NeighborhoodConfig(label, b, a, c_star, c1, c2)
