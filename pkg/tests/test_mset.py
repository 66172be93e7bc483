"""Tests for the cost-encoding tree: construction, metric, and depth formulas."""
from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from lambo.mset import (
    HorizonTooSmallError,
    ModuleSpace,
    Partition,
    construct_mset,
    depth_from_costs,
    describe_tree,
    hst_distance,
    lca_level,
    partition_is_valid,
    refine_partition,
    subtree_arms,
)


def box(*pairs):
    return np.array(pairs, dtype=float)


def bisect_cells(lo, hi, pieces, dim=0):
    """Split [lo, hi] along one axis into equal cells (test helper)."""
    edges = np.linspace(lo[dim], hi[dim], pieces + 1)
    cells = []
    for a, b in zip(edges, edges[1:]):
        c = np.stack([lo, hi], axis=1).astype(float)
        c[dim] = (a, b)
        cells.append(c)
    return cells


def two_module_tree(k1=2, k2=3, d1=1, d2=3):
    lo, hi = np.zeros(2), np.ones(2)
    p1 = Partition(module=1, cells=bisect_cells(lo, hi, k1))
    p2 = Partition(module=2, cells=bisect_cells(lo, hi, k2))
    return construct_mset([p1, p2], (d1, d2))


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def test_construct_shape_and_levels() -> None:
    t = two_module_tree()
    assert t.num_leaves == 6
    assert t.height == 4
    # every leaf sits at level 0 with an ancestor at each level up to the root
    assert t.leaf_ancestors.shape == (6, 5)
    assert len(set(t.leaf_ancestors[:, 4])) == 1  # single root
    assert len(set(t.leaf_ancestors[:, 0])) == 6  # distinct leaves


def test_construct_three_modules_unit_depths() -> None:
    lo, hi = np.zeros(3), np.ones(3)
    parts = [Partition(m, bisect_cells(lo, hi, 2, dim=m - 1)) for m in (1, 2, 3)]
    t = construct_mset(parts, (1, 1, 1))
    assert t.num_leaves == 8
    assert t.height == 3
    # arms differing only in the last module's cell split one level above the leaves
    for i, j in itertools.combinations(range(8), 2):
        ci, cj = t.leaf_cells[i], t.leaf_cells[j]
        if ci[0] == cj[0] and ci[1] == cj[1] and ci[2] != cj[2]:
            assert lca_level(t, i, j) == 1


def test_arms_differing_in_first_module_meet_at_root() -> None:
    t = two_module_tree(k1=3, k2=2, d1=2, d2=2)
    for i, j in itertools.combinations(range(t.num_leaves), 2):
        if t.leaf_cells[i][0] != t.leaf_cells[j][0]:
            assert lca_level(t, i, j) == t.height


def test_second_module_divergence_level_within_section() -> None:
    t = two_module_tree(k1=2, k2=3, d1=1, d2=3)
    for i, j in itertools.combinations(range(6), 2):
        ci, cj = t.leaf_cells[i], t.leaf_cells[j]
        if ci[0] == cj[0] and ci[1] != cj[1]:
            assert 1 <= lca_level(t, i, j) <= 3


def test_single_cell_zero_depth_degenerates_to_one_leaf() -> None:
    p = Partition(module=1, cells=[box((0.0, 1.0))])
    t = construct_mset([p], (0,))
    assert t.num_leaves == 1
    assert t.height == 0
    assert lca_level(t, 0, 0) == 0


def test_depth_too_small_for_cells_is_an_error() -> None:
    p = Partition(module=1, cells=bisect_cells(np.zeros(1), np.ones(1), 3))
    with pytest.raises(ValueError, match="module 1"):
        construct_mset([p], (1,))


def test_lca_is_zero_iff_same_leaf() -> None:
    t = two_module_tree()
    for i in range(6):
        for j in range(6):
            if i == j:
                assert lca_level(t, i, j) == 0
            else:
                assert lca_level(t, i, j) >= 1


# ---------------------------------------------------------------------------
# subtrees
# ---------------------------------------------------------------------------


def test_subtree_arms_nesting() -> None:
    t = two_module_tree()
    for i in range(6):
        assert subtree_arms(t, i, 0) == [i]
        assert subtree_arms(t, i, t.height) == list(range(6))
        prev: set[int] = {i}
        for h in range(t.height + 1):
            arms = set(subtree_arms(t, i, h))
            assert prev <= arms
            prev = arms


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------


def test_hst_distance_same_leaf_zero_and_symmetry() -> None:
    t = two_module_tree()
    costs = (10.0, 1.0)
    assert hst_distance(t, costs, 1.0, 2, 2) == 0.0
    for i, j in itertools.combinations(range(6), 2):
        assert hst_distance(t, costs, 0.5, i, j) == hst_distance(t, costs, 0.5, j, i)
        assert hst_distance(t, costs, 0.5, i, j) > 0.0


def test_hst_distance_hand_value_and_lambda_scaling() -> None:
    # arms in different first-module cells meet at the root: the distance is
    # sqrt(lambda) * sum(costs) * 2^H / 2^H = sqrt(lambda) * sum(costs)
    t = two_module_tree()
    i, j = 0, 5
    assert t.leaf_cells[i][0] != t.leaf_cells[j][0]
    d = hst_distance(t, (40.0, 10.0), 1.0, i, j)
    assert d == pytest.approx(50.0)
    assert hst_distance(t, (40.0, 10.0), 4.0, i, j) == pytest.approx(100.0)


def test_hst_distance_is_an_ultrametric() -> None:
    t = two_module_tree(k1=2, k2=4, d1=2, d2=3)
    costs = (7.0, 3.0)
    n = t.num_leaves
    for i, j, k in itertools.product(range(n), repeat=3):
        dij = hst_distance(t, costs, 1.0, i, j)
        djk = hst_distance(t, costs, 1.0, j, k)
        dik = hst_distance(t, costs, 1.0, i, k)
        assert dik <= max(dij, djk) + 1e-12


# ---------------------------------------------------------------------------
# depth formulas
# ---------------------------------------------------------------------------


def test_depths_hand_value_two_modules() -> None:
    assert depth_from_costs((40.0, 10.0), 1.0, 10**6, 8) == (2, 3)


def test_depths_hand_value_single_module() -> None:
    # floor(log2(T^(1/3) / log2(K))) = floor(log2(100 / 2)) = 5
    assert depth_from_costs((1.0,), 1.0, 10**6, 4) == (5,)


def test_depths_equal_costs_give_unit_first_depth() -> None:
    d = depth_from_costs((1.0, 1.0), 1.0, 10**6, 8)
    assert d[0] == 1


def test_depths_negative_intermediate_clamps_with_warning() -> None:
    with pytest.warns(UserWarning, match="clamp"):
        d = depth_from_costs((1.0, 1.0), 16.0, 10**6, 4)
    assert d[0] == 0


def test_depths_horizon_too_small_is_an_error() -> None:
    with pytest.raises(HorizonTooSmallError):
        depth_from_costs((40.0, 10.0), 1.0, 8, 8)


def test_depths_reject_bad_inputs() -> None:
    with pytest.raises(ValueError):
        depth_from_costs((0.0, 1.0), 1.0, 100, 4)
    with pytest.raises(ValueError):
        depth_from_costs((1.0,), -1.0, 100, 4)
    with pytest.raises(ValueError):
        depth_from_costs((1.0,), 1.0, 100, 1)


def test_dominance_over_movement_cost_exhaustive() -> None:
    # with derived depths and lambda = 1, the tree distance dominates the real
    # switching cost sum(costs[m-1:]) for every pair first differing at module m
    costs = (40.0, 10.0)
    lam = 1.0
    depths = depth_from_costs(costs, lam, 10**6, 8)
    lo, hi = np.zeros(2), np.ones(2)
    for k1, k2 in ((2, 4), (4, 2), (1, 8)):
        if k1 > 2 ** depths[0] or k2 > 2 ** depths[1]:
            continue
        parts = [
            Partition(1, bisect_cells(lo, hi, k1, dim=0)),
            Partition(2, bisect_cells(lo, hi, k2, dim=1)),
        ]
        t = construct_mset(parts, depths)
        for i, j in itertools.combinations(range(t.num_leaves), 2):
            ci, cj = t.leaf_cells[i], t.leaf_cells[j]
            first = next(m for m in range(2) if ci[m] != cj[m])
            real_cost = sum(costs[first:])
            assert hst_distance(t, costs, lam, i, j) / math.sqrt(lam) >= real_cost - 1e-9


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------


def test_refine_partition_splits_longest_edge_lowest_dim_tie() -> None:
    space = ModuleSpace(bounds=box((0.0, 1.0), (0.0, 1.0)), cost=1.0)
    p = Partition(module=1, cells=[space.bounds.copy()])
    refined = refine_partition(p, 0)
    assert len(refined.cells) == 2
    # square cell: tie between dims broken toward dim 0, split at the midpoint
    assert refined.cells[0][0].tolist() == [0.0, 0.5]
    assert refined.cells[1][0].tolist() == [0.5, 1.0]
    assert refined.cells[0][1].tolist() == [0.0, 1.0]
    assert partition_is_valid(refined, space.bounds)


def test_refine_partition_prefers_strictly_longest_edge() -> None:
    p = Partition(module=1, cells=[box((0.0, 1.0), (0.0, 4.0))])
    refined = refine_partition(p, 0)
    assert refined.cells[0][1].tolist() == [0.0, 2.0]
    assert refined.cells[1][1].tolist() == [2.0, 4.0]


def test_refine_partition_bad_index() -> None:
    p = Partition(module=1, cells=[box((0.0, 1.0))])
    with pytest.raises(ValueError):
        refine_partition(p, 3)


def test_partition_validity_checker() -> None:
    bounds = box((0.0, 1.0))
    good = Partition(1, [box((0.0, 0.5)), box((0.5, 1.0))])
    gap = Partition(1, [box((0.0, 0.4)), box((0.5, 1.0))])
    overlap = Partition(1, [box((0.0, 0.6)), box((0.5, 1.0))])
    assert partition_is_valid(good, bounds)
    assert not partition_is_valid(gap, bounds)
    assert not partition_is_valid(overlap, bounds)


def test_describe_tree_mentions_all_levels() -> None:
    t = two_module_tree()
    text = describe_tree(t)
    for h in range(t.height + 1):
        assert f"level {h}" in text
