import numpy as np
import pytest

from seriesearch.summarize import prefix_sums, segment_stats_matrix
from seriesearch.tree import (
    MEAN,
    SD,
    IdAllocator,
    Node,
    SplitPolicy,
    get_best_split_policy,
    route_to_leaf,
    split_node,
    update_leaf_synopsis,
)

from conftest import oracle_all_gains, random_walks


def make_leaf(n, endpoints=None, ids=None):
    ids = ids or IdAllocator()
    return Node(ids.take(), endpoints if endpoints is not None else [n]), ids


def fill_leaf(leaf, members):
    for s in members:
        update_leaf_synopsis(leaf, s)


class TestRouting:
    def test_single_node_tree_returns_root(self):
        leaf, _ = make_leaf(16)
        s = random_walks(1, 16, 1)[0]
        assert route_to_leaf(leaf, s) is leaf

    def test_mean_policy_midpoint_threshold(self):
        # segment-mean envelope [-0.25, 0.10] gives threshold -0.075; a
        # series with mean below it routes left
        n = 16
        ids = IdAllocator()
        root = Node(ids.take(), [n])
        root.left = Node(ids.take(), [n], parent=root)
        root.right = Node(ids.take(), [n], parent=root)
        root.policy = SplitPolicy(0, MEAN, None, 0, n, (-0.25 + 0.10) / 2)
        root.is_leaf = False
        low = np.full(n, -0.2, np.float32)
        high = np.full(n, 0.0, np.float32)
        assert route_to_leaf(root, low) is root.left
        assert route_to_leaf(root, high) is root.right

    def test_routing_agrees_with_policies_along_path(self):
        # build a tree by inserting, then re-evaluate every policy on the path
        n = 32
        ids = IdAllocator()
        root = Node(ids.take(), [n])
        members = []
        tau = 16
        data = random_walks(400, n, 2)
        for s in data:
            leaf = route_to_leaf(root, s)
            update_leaf_synopsis(leaf, s)
            members.append((leaf, s))
            leaf_members = np.array(
                [m for lf, m in members if lf is leaf], np.float32
            )
            if leaf.rho > tau:
                policy = get_best_split_policy(leaf, leaf_members)
                left, right, go_left = split_node(leaf, policy, leaf_members, ids)
                members = [(lf, m) for lf, m in members if lf is not leaf]
                for m, gl in zip(leaf_members, go_left):
                    members.append((left if gl else right, m))

        check = random_walks(1000, n, 3)
        for s in check:
            node = root
            cs, cs2 = prefix_sums(np.ascontiguousarray(s))
            target = route_to_leaf(root, s)
            while not node.is_leaf:
                went_left = node.policy.goes_left(cs, cs2)
                v = node.policy.route_value(cs, cs2)
                assert went_left == (v < node.policy.threshold)
                node = node.left if went_left else node.right
            assert node is target


class TestBestSplitPolicy:
    def test_separating_attribute_wins(self):
        # half the members at mean -1, half at +1, sds all equal: a mean
        # split of segment 0 maximizes the gain and the horizontal form wins
        # the tie against the vertical ones
        n = 16
        leaf, _ = make_leaf(n)
        members = np.concatenate(
            [np.full((8, n), -1.0, np.float32), np.full((8, n), 1.0, np.float32)]
        )
        fill_leaf(leaf, members)
        policy = get_best_split_policy(leaf, members)
        assert policy.attribute == MEAN
        assert policy.segment_index == 0
        assert not policy.is_vsplit
        mask = policy.route_mask(members)
        assert mask[:8].all() and not mask[8:].any()

    def test_identical_members_fall_back(self):
        n = 8
        leaf, _ = make_leaf(n)
        members = np.tile(random_walks(1, n, 5), (6, 1))
        fill_leaf(leaf, members)
        policy = get_best_split_policy(leaf, members)
        assert policy.segment_index == 0
        assert policy.attribute == MEAN
        assert not policy.is_vsplit
        assert policy.gain == 0.0

    @pytest.mark.parametrize("seed", range(8))
    def test_gain_is_maximal_over_exhaustive_enumeration(self, seed):
        n = 32
        ids = IdAllocator()
        leaf = Node(ids.take(), [n // 2, n])
        members = random_walks(24, n, 100 + seed)
        fill_leaf(leaf, members)
        policy = get_best_split_policy(leaf, members)
        gains = oracle_all_gains(leaf, members)
        best = max(g for _, g in gains)
        assert policy.gain == pytest.approx(best, rel=1e-9, abs=1e-12)


class TestSplitNode:
    def test_hsplit_balanced(self):
        n = 8
        leaf, ids = make_leaf(n)
        members = np.concatenate(
            [np.full((4, n), -1.0, np.float32), np.full((4, n), 1.0, np.float32)]
        )
        fill_leaf(leaf, members)
        policy = SplitPolicy(0, MEAN, None, 0, n, 0.0)
        left, right, go_left = split_node(leaf, policy, members, ids)
        assert left.rho == right.rho == 4
        assert not leaf.is_leaf
        assert np.array_equal(left.endpoints, leaf.endpoints)

    def test_vsplit_inserts_endpoint(self):
        n = 16
        leaf, ids = make_leaf(n, endpoints=[8, 16])
        members = random_walks(6, n, 6)
        fill_leaf(leaf, members)
        policy = SplitPolicy(0, MEAN, 4, 0, 4, 0.0)
        left, right, _ = split_node(leaf, policy, members, ids)
        assert list(left.endpoints) == [4, 8, 16]
        assert list(right.endpoints) == [4, 8, 16]

    def test_members_partition_exactly(self):
        n = 32
        leaf, ids = make_leaf(n)
        members = random_walks(20, n, 7)
        fill_leaf(leaf, members)
        policy = get_best_split_policy(leaf, members)
        left, right, go_left = split_node(leaf, policy, members, ids)
        assert left.rho + right.rho == len(members)
        # children envelopes contain exactly their members
        for child, mask in ((leaf.left, go_left), (leaf.right, ~go_left)):
            if not mask.any():
                continue
            starts = np.concatenate([[0], child.endpoints[:-1]])
            means, sds = segment_stats_matrix(members[mask], starts,
                                              child.endpoints)
            assert np.array_equal(child.mu_min, means.min(axis=0))
            assert np.array_equal(child.mu_max, means.max(axis=0))
            assert np.array_equal(child.sd_min, sds.min(axis=0))
            assert np.array_equal(child.sd_max, sds.max(axis=0))

    def test_skewed_split_creates_both_children(self):
        n = 8
        leaf, ids = make_leaf(n)
        members = np.tile(random_walks(1, n, 8), (5, 1))
        fill_leaf(leaf, members)
        policy = get_best_split_policy(leaf, members)
        left, right, go_left = split_node(leaf, policy, members, ids)
        assert left is not None and right is not None
        assert left.rho + right.rho == 5
        assert left.rho == 0  # identical values route right of the midpoint


class TestUpdateLeafSynopsis:
    def test_first_series_collapses_envelope(self):
        n = 16
        leaf, _ = make_leaf(n, endpoints=[8, 16])
        s = random_walks(1, n, 9)[0]
        update_leaf_synopsis(leaf, s)
        assert leaf.rho == 1
        assert np.array_equal(leaf.mu_min, leaf.mu_max)
        assert np.array_equal(leaf.sd_min, leaf.sd_max)

    def test_inside_series_only_bumps_count(self):
        n = 16
        leaf, _ = make_leaf(n)
        a = np.full(n, -1.0, np.float32)
        b = np.full(n, 1.0, np.float32)
        mid = np.zeros(n, np.float32)
        for s in (a, b):
            update_leaf_synopsis(leaf, s)
        before = (leaf.mu_min.copy(), leaf.mu_max.copy(),
                  leaf.sd_min.copy(), leaf.sd_max.copy())
        update_leaf_synopsis(leaf, mid)
        assert leaf.rho == 3
        for prev, now in zip(before, (leaf.mu_min, leaf.mu_max,
                                      leaf.sd_min, leaf.sd_max)):
            assert np.array_equal(prev, now)

    def test_envelope_matches_recompute_from_scratch(self):
        n = 64
        leaf, _ = make_leaf(n, endpoints=[16, 40, 64])
        members = random_walks(30, n, 10)
        fill_leaf(leaf, members)
        starts = np.array([0, 16, 40])
        means, sds = segment_stats_matrix(members, starts, leaf.endpoints)
        assert np.array_equal(leaf.mu_min, means.min(axis=0))
        assert np.array_equal(leaf.mu_max, means.max(axis=0))
        assert np.array_equal(leaf.sd_min, sds.min(axis=0))
        assert np.array_equal(leaf.sd_max, sds.max(axis=0))
