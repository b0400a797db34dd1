import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import chain, star
from gridtopo.errors import DomainError
from gridtopo.grid import (
    GridGraph,
    Impedance,
    RadialTree,
    dense_reduced_laplacian,
    descendants,
    generate_random_feeder,
    h_inverse_difference,
    path_to_root,
    random_radial_tree,
    reduced_laplacian_inverse,
)


def test_impedance_must_be_positive():
    with pytest.raises(DomainError):
        Impedance(0.0, 1.0)
    with pytest.raises(DomainError):
        Impedance(1.0, -0.1)


class TestPaths:
    def test_chain_leaf(self):
        assert path_to_root(chain(), 2) == [(2, 1), (1, 0)]

    def test_root_has_empty_path(self):
        assert path_to_root(chain(), 0) == []

    def test_star_leaf(self):
        assert path_to_root(star(), 3) == [(3, 1), (1, 0)]

    def test_unknown_node(self):
        with pytest.raises(DomainError):
            path_to_root(chain(), 5)


class TestDescendants:
    def test_chain(self):
        assert descendants(chain(), 1) == {1, 2}
        assert descendants(chain(), 2) == {2}

    def test_star(self):
        assert descendants(star(), 1) == {1, 2, 3}

    def test_unknown_node(self):
        with pytest.raises(DomainError):
            descendants(star(), -1)

    def test_sibling_sets_disjoint_and_root_child_covers_all(self):
        tree = random_radial_tree(40, seed=3)
        for kids in tree.children:
            for a, b in itertools.combinations(kids, 2):
                assert not descendants(tree, a) & descendants(tree, b)
        (top,) = tree.children[0]
        assert len(descendants(tree, top)) == tree.num_nodes - 1


class TestInverse:
    def test_chain(self):
        np.testing.assert_array_equal(reduced_laplacian_inverse(chain()), [[1, 1], [1, 2]])

    def test_star(self):
        np.testing.assert_array_equal(reduced_laplacian_inverse(star()), [[1, 1, 1], [1, 2, 1], [1, 1, 2]])

    def test_reactance_kind(self):
        np.testing.assert_allclose(reduced_laplacian_inverse(chain(1.0, 0.5), "reactance"), [[0.5, 0.5], [0.5, 1.0]])

    @pytest.mark.parametrize("n", [2, 5, 30, 200])
    @pytest.mark.parametrize("kind", ["resistance", "reactance"])
    def test_matches_dense_inverse(self, n, kind):
        tree = random_radial_tree(n, seed=n)
        path_sum = reduced_laplacian_inverse(tree, kind)
        dense = np.linalg.inv(dense_reduced_laplacian(tree, kind))
        assert np.linalg.norm(path_sum - dense) <= 1e-9 * np.linalg.norm(dense)
        np.testing.assert_allclose(path_sum @ dense_reduced_laplacian(tree, kind), np.eye(n - 1), atol=1e-9)

    def test_symmetric_positive_definite(self):
        h = reduced_laplacian_inverse(random_radial_tree(25, seed=1))
        np.testing.assert_array_equal(h, h.T)
        assert np.linalg.eigvalsh(h).min() > 0


class TestInverseDifference:
    def test_descendant_case(self):
        assert h_inverse_difference(chain(0.3, 1.0), 2, 1, 2) == 0.3

    def test_otherwise_zero(self):
        assert h_inverse_difference(chain(0.3, 1.0), 2, 1, 1) == 0.0

    def test_wrong_orientation(self):
        with pytest.raises(DomainError):
            h_inverse_difference(chain(), 1, 2, 2)
        with pytest.raises(DomainError):
            h_inverse_difference(star(), 2, 3, 2)

    @pytest.mark.parametrize("kind", ["resistance", "reactance"])
    def test_equals_row_difference(self, kind):
        tree = random_radial_tree(30, seed=9)
        full = np.zeros((30, 30))
        full[1:, 1:] = reduced_laplacian_inverse(tree, kind)
        for a in range(1, 30):
            b = int(tree.parent[a])
            for c in range(30):
                expect = full[a, c] - full[b, c]
                assert abs(h_inverse_difference(tree, a, b, c, kind) - expect) <= 1e-12


class TestRadialTreeInvariants:
    def test_rejects_root_degree_two(self):
        z = Impedance(1, 1)
        with pytest.raises(DomainError):
            RadialTree.from_edges(3, [(1, 0, z), (2, 0, z)])

    def test_one_edge_perturbations_rejected(self):
        tree = random_radial_tree(9, seed=4)
        z = Impedance(0.05, 0.05)
        present = tree.edge_set
        for k in range(len(tree.edges)):
            with pytest.raises(DomainError):
                RadialTree.from_edges(9, tree.edges[:k] + tree.edges[k + 1 :])
        for u, v in itertools.combinations(range(9), 2):
            if (u, v) not in present:
                with pytest.raises(DomainError):
                    RadialTree.from_edges(9, list(tree.edges) + [(u, v, z)])

    def test_parent_orientation(self):
        tree = random_radial_tree(20, seed=5)
        assert tree.parent[0] == -1
        for m, p, _ in tree.edges:
            assert tree.parent[m] == p
            assert tree.depth[m] == tree.depth[p] + 1


class TestGridGraph:
    def test_rejects_disconnected(self):
        z = Impedance(1, 1)
        with pytest.raises(DomainError):
            GridGraph(4, ((0, 1, z), (2, 3, z)))

    def test_rejects_self_loop_and_duplicate(self):
        z = Impedance(1, 1)
        with pytest.raises(DomainError):
            GridGraph(2, ((0, 1, z), (1, 1, z)))
        with pytest.raises(DomainError):
            GridGraph(2, ((0, 1, z), (1, 0, z)))

    def test_operational_tree_round_trip(self):
        grid, tree = generate_random_feeder(15, 10, seed=2)
        assert grid.operational_tree() == tree


class TestGenerateFeeder:
    def test_thirty_node_feeder(self):
        grid, tree = generate_random_feeder(30, 30, (0.01, 0.1), seed=7)
        assert len(tree.edges) == 29
        assert len(grid.candidate_edges) == 59
        assert tree.edge_set <= set(grid.edge_keys())
        assert len(tree.children[0]) == 1
        extras = set(grid.edge_keys()) - tree.edge_set
        assert all(0 not in e for e in extras)
        for z in grid.impedances.values():
            assert 0.01 <= z.r <= 0.1 and 0.01 <= z.x <= 0.1

    def test_two_nodes(self):
        grid, tree = generate_random_feeder(2, 0, seed=0)
        assert tree.edge_keys() == [(0, 1)]
        assert grid.edge_keys() == [(0, 1)]

    def test_deterministic(self):
        a = generate_random_feeder(30, 30, seed=7)
        b = generate_random_feeder(30, 30, seed=7)
        assert a[0] == b[0] and a[1] == b[1]

    def test_too_many_extras(self):
        # 5 nodes: 6 non-root pairs, 3 of them tree edges
        with pytest.raises(DomainError):
            generate_random_feeder(5, 4, seed=0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**32 - 1))
def test_inverse_entries_are_shared_path_sums(n, seed):
    tree = random_radial_tree(n, seed=seed)
    h = reduced_laplacian_inverse(tree)
    for a in range(1, n):
        pa = {e for e in path_to_root(tree, a)}
        for b in range(a, n):
            shared = pa & set(path_to_root(tree, b))
            assert h[a - 1, b - 1] == pytest.approx(sum(tree.r_up[c] for c, _ in shared), abs=1e-12)
