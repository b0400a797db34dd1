"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import itertools
import time

import numpy as np
import pytest

from conftest import random_instance, report
from gridtopo.cli import main
from gridtopo.grid import dense_reduced_laplacian, random_radial_tree, reduced_laplacian_inverse
from gridtopo.harness import ExperimentConfig, run_sweep
from gridtopo.hidden import (
    classify_neighborhood,
    learn_with_missing,
    observable_mst,
    place_hidden_nodes,
    satisfies_assumption2,
)
from gridtopo.injection import invert_lcpf
from gridtopo.lcpf import exact_voltage_moments, random_injection_stats, sample_injections, simulate, solve_lcpf
from gridtopo.learn import PhiWeights, complete_edges, constrained_mst, exact_phi_weights, topology_error


def test_criterion_1_exact_moments_recover_every_feeder():
    start = time.perf_counter()
    errors = []
    for seed in range(100):
        grid, tree, stats = random_instance(seed)
        learned = constrained_mst(grid.edge_keys(), exact_phi_weights(tree, stats))
        errors.append(topology_error(learned, tree))
    elapsed = time.perf_counter() - start
    ok = max(errors) == 0.0 and elapsed < 60
    assert report(1, ok, f"max error {max(errors)} over 100 feeders in {elapsed:.1f} s")


def _brute_force(n, pairs, weights):
    """Exhaustive optimum as ``(total, tie key, edge set)``.

    Integer weights keep totals exact. Among optimal trees the documented rule
    picks the Kruskal tree under the ``(weight, u, v)`` order, which is the one
    minimizing ``sum 2**rank`` over its non-root edges, then the root edge
    ``(weight, node)``.
    """
    inner = sorted((weights(u, v), u, v) for u, v in pairs if 0 not in (u, v))
    rank = {(u, v): 2**k for k, (_, u, v) in enumerate(inner)}
    best = None
    for subset in itertools.combinations(pairs, n - 1):
        root = [e for e in subset if 0 in e]
        if len(root) != 1:
            continue
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                i = parent[i]
            return i

        ok = True
        for u, v in subset:
            ru, rv = find(u), find(v)
            if ru == rv:
                ok = False
                break
            parent[ru] = rv
        if not ok:
            continue
        key = (
            sum(weights(u, v) for u, v in subset),
            sum(rank[e] for e in subset if e not in root),
            (weights(*root[0]), root[0][1]),
        )
        if best is None or key < best[:3]:
            best = key + (frozenset(subset),)
    return best


def _connected_with_root_edge(n, pairs):
    if not any(0 in e for e in pairs):
        return False
    seen, stack = {1}, [1]
    while stack:
        a = stack.pop()
        for u, v in pairs:
            for s, t in ((u, v), (v, u)):
                if s == a and t != 0 and t not in seen:
                    seen.add(t)
                    stack.append(t)
    return len(seen) == n - 1


def _brute_force_instances():
    rng = np.random.default_rng(2024)
    # every graph on four nodes whose non-root part is connected
    full4 = complete_edges(range(4))
    for mask in range(1, 2 ** len(full4)):
        pairs = [e for k, e in enumerate(full4) if mask >> k & 1]
        if _connected_with_root_edge(4, pairs):
            yield 4, pairs, "continuous"
    for n in range(3, 9):
        full = complete_edges(range(n))
        if n <= 7:
            yield n, full, "continuous"
            yield n, full, "ties"
        for _ in range(12):
            while True:
                k = min(len(full), n - 1 + int(rng.integers(1, 6)))
                pick = rng.choice(len(full), size=k, replace=False)
                pairs = sorted(full[i] for i in pick)
                if _connected_with_root_edge(n, pairs):
                    break
            yield n, pairs, "continuous" if rng.random() < 0.5 else "ties"


def test_criterion_2_brute_force_equivalence():
    rng = np.random.default_rng(7)
    checked = ties = 0
    mismatches = []
    for n, pairs, kind in _brute_force_instances():
        if kind == "ties":
            mat = rng.integers(1, 4, size=(n, n)).astype(float)
        else:
            mat = rng.uniform(size=(n, n))
        w = PhiWeights(tuple(range(n)), mat + mat.T)
        total, _, _, edges = _brute_force(n, pairs, w)
        got = constrained_mst(pairs, w)
        same_weight = got.weight_total == pytest.approx(total, rel=1e-12)
        same_tree = kind != "ties" or got.edge_set == edges
        if not (same_weight and same_tree):
            mismatches.append((n, kind, pairs))
        checked += 1
        ties += kind == "ties"
    ok = not mismatches
    assert report(2, ok, f"{checked} graphs with N <= 8, {ties} with integer ties, {len(mismatches)} mismatches")


def test_criterion_3_full_observation_replication():
    config = ExperimentConfig(num_nodes=30, extra_edges=30, sample_counts=[50, 500], trials=100, seed=3, workers=4)
    start = time.perf_counter()
    summary = {e["m"]: e for e in run_sweep(config).summary()}
    elapsed = time.perf_counter() - start
    e50, e500 = summary[50]["mean_error"], summary[500]["mean_error"]
    ok = e50 <= 0.05 and e500 <= 0.005 and elapsed < 300
    assert report(3, ok, f"mean error {e50:.4f} at m=50, {e500:.4f} at m=500, {elapsed:.1f} s")


def _lca(anc, depth):
    """Lowest common ancestor of every node pair from the inclusive ancestor matrix."""
    shared = anc[:, :, None] & anc[:, None, :]
    return np.argmax(np.where(shared, depth[:, None, None], -1), axis=0)


def test_criterion_4_phi_ordering_invariants():
    counts = {"case1": 0, "case2": 0, "case3": 0, "siblings": 0, "grandparent": 0, "paths": 0}
    violations = []
    worst_additivity, min_margin = 0.0, np.inf
    for seed in range(50):
        _, tree, stats = random_instance(1000 + seed)
        n = tree.num_nodes
        phi = exact_phi_weights(tree, stats).matrix
        anc = tree.ancestor_matrix.astype(bool)
        strict = anc & ~np.eye(n, dtype=bool)
        depth = anc.sum(axis=0) - 1
        lca = _lca(anc, depth)
        # cube[a, b, c] marks triples where the ordering rule predicts phi_ab < phi_ac
        below = strict.T  # below[x, y]: x is a strict descendant of y
        case1 = below[:, :, None] & below[None, :, :]
        case2 = below.T[None, :, :] & below[:, :, None] & (lca[:, None, :] == np.arange(n)[None, :, None])
        case3 = below.T[:, :, None] & below.T[None, :, :]
        holds = phi[:, :, None] < phi[:, None, :]
        for name, mask in (("case1", case1), ("case2", case2), ("case3", case3)):
            counts[name] += int(mask.sum())
            if np.any(mask & ~holds):
                violations.append((seed, name))

        for b in range(n):
            kids = tree.children[b]
            for a, c in itertools.combinations(kids, 2):
                rel = abs(phi[a, c] - phi[a, b] - phi[b, c]) / phi[a, c]
                worst_additivity = max(worst_additivity, rel)
                counts["siblings"] += 1
            if b == 0:
                continue
            a = int(tree.parent[b])
            for c in kids:
                margin = (phi[a, c] - phi[a, b] - phi[b, c]) / phi[a, c]
                min_margin = min(min_margin, margin)
                counts["grandparent"] += 1

        var = np.concatenate([[0.0], np.diag(exact_voltage_moments(tree, stats).omega_eps)])
        for a in range(1, n):
            for b in np.flatnonzero(strict[:, a]):
                counts["paths"] += 1
                if b != 0 and not var[a] > var[b]:
                    violations.append((seed, "variance", a, int(b)))
    ok = not violations and worst_additivity <= 1e-9 and min_margin > 0
    detail = (
        f"{counts['case1']}/{counts['case2']}/{counts['case3']} ordering triples, "
        f"sibling additivity {worst_additivity:.1e}, grandparent margin {min_margin:.2e}, "
        f"{len(violations)} violations"
    )
    assert report(4, ok, detail)


def test_criterion_5_exact_missing_data():
    rng = np.random.default_rng(5)
    wrong, bad_config, neighborhoods = [], [], 0
    for k in range(100):
        size = 1 + k % 4
        n = int(rng.integers(15, 51))
        grid, tree, stats = random_instance(rng, n=n)
        hidden = place_hidden_nodes(tree, size, seed=rng)
        assert satisfies_assumption2(tree, hidden)
        full = exact_phi_weights(tree, stats)
        learned = learn_with_missing(full, grid, hidden, stats, tolerance=1e-6)
        if learned.edge_set != tree.edge_set:
            wrong.append(k)
        obs = observable_mst(full.restrict([0] + [v for v in range(1, n) if v not in hidden]))
        for b in hidden:
            if tree.children[b]:
                neighborhoods += 1
                cfg = classify_neighborhood(obs, full, tree, b)
                if cfg is None or cfg.label not in ("A", "B"):
                    bad_config.append((k, b))
    ok = not wrong and not bad_config
    detail = f"{100 - len(wrong)}/100 exact, {neighborhoods - len(bad_config)}/{neighborhoods} neighborhoods A or B"
    assert report(5, ok, detail)


def test_criterion_6_missing_data_trends():
    counts = [50, 200, 1000, 5000]
    table = {}
    for size in (4, 6, 8):
        config = ExperimentConfig(
            num_nodes=30, extra_edges=30, hidden_count=size, sample_counts=counts, trials=100, seed=11, workers=4
        )
        table[size] = [(e["mean_error"], e["stderr"]) for e in run_sweep(config).summary()]
    in_m = all(
        table[s][i + 1][0] <= table[s][i][0] + max(table[s][i][1], table[s][i + 1][1])
        for s in table
        for i in range(len(counts) - 1)
    )
    sizes = sorted(table)
    in_size = all(
        table[b][i][0] >= table[a][i][0] - max(table[a][i][1], table[b][i][1])
        for a, b in zip(sizes, sizes[1:])
        for i in range(len(counts))
    )
    rows = "; ".join(f"|M|={s}: " + " ".join(f"{m:.4f}" for m, _ in table[s]) for s in sizes)
    assert report(6, in_m and in_size, f"mean error at m={counts}: {rows}")


def test_criterion_7_lcpf_numerics():
    worst_inverse = 0.0
    for n in (2, 10, 50, 120, 200):
        tree = random_radial_tree(n, seed=n)
        for kind in ("resistance", "reactance"):
            dense = np.linalg.inv(dense_reduced_laplacian(tree, kind))
            rel = np.linalg.norm(reduced_laplacian_inverse(tree, kind) - dense) / np.linalg.norm(dense)
            worst_inverse = max(worst_inverse, rel)

    worst_round_trip = 0.0
    for n in (3, 30, 200):
        tree = random_radial_tree(n, seed=n + 1)
        inj = sample_injections(random_injection_stats(n - 1, seed=n), 200, seed=n)
        back = invert_lcpf(tree, solve_lcpf(tree, inj))
        worst_round_trip = max(worst_round_trip, np.abs(back.p - inj.p).max(), np.abs(back.q - inj.q).max())

    tree = random_radial_tree(10, seed=10)
    stats = random_injection_stats(9, seed=10)
    eps = simulate(tree, stats, 1_000_000, seed=10, with_angles=False).eps
    exact = exact_voltage_moments(tree, stats).omega_eps
    omega_rel = np.linalg.norm(np.cov(eps, rowvar=False) - exact) / np.linalg.norm(exact)

    ok = worst_inverse <= 1e-9 and worst_round_trip <= 1e-8 and omega_rel <= 0.01
    detail = f"inverse {worst_inverse:.1e}, round trip {worst_round_trip:.1e}, covariance {omega_rel:.4f}"
    assert report(7, ok, detail)


def test_criterion_8_injection_covariance_recovery():
    config = ExperimentConfig(
        num_nodes=30, extra_edges=30, sample_counts=[100, 10_000], trials=20, seed=8, estimate_covariance=True, workers=4
    )
    rows = run_sweep(config).rows
    small = {r.trial: r.covariance_error for r in rows if r.m == 100}
    large = {r.trial: r.covariance_error for r in rows if r.m == 10_000}
    improves = all(large[t] < small[t] for t in small)
    worst = max(large.values())
    ok = improves and worst <= 0.10
    assert report(8, ok, f"every trial improves: {improves}, worst error at m=10^4 {worst:.4f}")


def test_criterion_9_sweep_is_deterministic(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(
        '{"num_nodes": 20, "extra_edges": 15, "sample_counts": [10, 50], "trials": 6, '
        '"hidden_count": 2, "estimate_covariance": true, "seed": 9}'
    )
    outputs = []
    for run, workers in (("a", "1"), ("b", "3")):
        out = tmp_path / run
        assert main(["sweep", "--config", str(cfg), "--out-dir", str(out), "--workers", workers, "--quiet"]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = outputs[0] == outputs[1] and len(outputs[0]) >= 2
    assert report(9, ok, f"{len(outputs[0])} files compared across 1 and 3 workers")
