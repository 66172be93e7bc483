"""Cost-encoding tree over modular search spaces.

Modules 1..N-1 carry switching costs and per-module cell partitions; the tree
stacks one section per module, top down.  A section for a module with k cells
and depth d fans out into the k cells at its top node and pads each branch
with a unary chain so the section spans exactly d levels.  Any two arms that
first differ in module m therefore diverge at the top of module m's section,
which is what makes the tree metric dominate the real switching cost.

Levels count from the leaves: leaves sit at level 0 and the root at level
H = sum(depths).  A tree with K leaves, total depth H, and per-module costs
c_1..c_{N-1} induces the metric

    dist(u, v) = sqrt(lambda) * sum(c_j) * 2^level(lca(u, v)) / 2^H

which is an ultrametric and is zero exactly on identical leaves.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

DEPTH_NUDGE = 1e-12  # guards floor() against representation error at exact powers of two


class HorizonTooSmallError(ValueError):
    """The horizon cannot support the requested tree depth."""


@dataclass(frozen=True)
class ModuleSpace:
    """Axis-aligned box of one module's variables plus its switching cost."""

    bounds: np.ndarray  # (d, 2) rows of (lo, hi)
    cost: float

    def __post_init__(self) -> None:
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2:
            raise ValueError(f"bounds must be (d, 2), got shape {b.shape}")
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("module bounds must satisfy lo < hi in every dimension")
        object.__setattr__(self, "bounds", b)

    @property
    def dimension(self) -> int:
        return self.bounds.shape[0]


@dataclass(frozen=True)
class Partition:
    """Cells of one module's box; cells are (d, 2) boxes."""

    module: int
    cells: list[np.ndarray]


@dataclass(frozen=True)
class MSET:
    partitions: list[Partition]
    depths: tuple[int, ...]
    height: int
    parent: np.ndarray          # parent node id per node (-1 at the root)
    level: np.ndarray           # level per node, leaves 0 .. root H
    leaf_cells: np.ndarray      # (K, N-1) cell index per module
    leaf_ancestors: np.ndarray  # (K, H+1) ancestor node id at each level
    node_labels: dict = field(default_factory=dict, repr=False)

    @property
    def num_leaves(self) -> int:
        return self.leaf_cells.shape[0]


def construct_mset(partitions: list[Partition], depths: tuple[int, ...] | list[int]) -> MSET:
    """Build the tree from per-module partitions and per-module depths.

    Requires 2^depth >= number of cells for every module; every leaf ends at
    uniform depth sum(depths) and corresponds to one cell combination.
    """
    depths = tuple(int(d) for d in depths)
    if len(partitions) != len(depths):
        raise ValueError(f"{len(partitions)} partitions vs {len(depths)} depths")
    if not partitions:
        raise ValueError("at least one partitioned module is required")
    for p, d in zip(partitions, depths):
        if d < 0:
            raise ValueError(f"module {p.module}: negative depth {d}")
        if not p.cells:
            raise ValueError(f"module {p.module}: empty partition")
        if 2**d < len(p.cells):
            raise ValueError(
                f"module {p.module}: depth {d} cannot separate {len(p.cells)} cells"
            )
    height = sum(depths)
    parent = [-1]
    level = [height]
    labels: dict[int, tuple[int, int]] = {}

    def add_node(par: int) -> int:
        parent.append(par)
        level.append(level[par] - 1)
        return len(parent) - 1

    frontier: list[tuple[int, tuple[int, ...]]] = [(0, ())]
    for p, d in zip(partitions, depths):
        nxt = []
        for node, cells in frontier:
            if len(p.cells) == 1:
                nid = node
                for _ in range(d):
                    nid = add_node(nid)
                labels.setdefault(nid, (p.module, 0))
                nxt.append((nid, cells + (0,)))
            else:
                for ci in range(len(p.cells)):
                    nid = add_node(node)
                    labels[nid] = (p.module, ci)
                    for _ in range(d - 1):
                        nid = add_node(nid)
                    nxt.append((nid, cells + (ci,)))
        frontier = nxt

    parent_arr = np.array(parent)
    level_arr = np.array(level)
    leaf_cells = np.array([cells for _, cells in frontier], dtype=int)
    ancestors = np.zeros((len(frontier), height + 1), dtype=int)
    for row, (leaf, _) in enumerate(frontier):
        nid = leaf
        for h in range(height + 1):
            ancestors[row, h] = nid
            nid = parent_arr[nid]
    return MSET(
        partitions=list(partitions),
        depths=depths,
        height=height,
        parent=parent_arr,
        level=level_arr,
        leaf_cells=leaf_cells,
        leaf_ancestors=ancestors,
        node_labels=labels,
    )


def lca_level(tree: MSET, i: int, j: int) -> int:
    """Level of the lowest common ancestor of two arms (0 iff i == j)."""
    same = tree.leaf_ancestors[i] == tree.leaf_ancestors[j]
    return int(np.argmax(same))


def subtree_arms(tree: MSET, i: int, h: int) -> list[int]:
    """Arms below arm i's ancestor at level h (h=0 -> {i}, h=H -> all)."""
    if not 0 <= h <= tree.height:
        raise ValueError(f"level {h} outside [0, {tree.height}]")
    anchor = tree.leaf_ancestors[i, h]
    return list(np.nonzero(tree.leaf_ancestors[:, h] == anchor)[0])


def hst_distance(tree: MSET, costs: tuple[float, ...], lam: float, i: int, j: int) -> float:
    """Tree metric sqrt(lambda) * sum(costs) * 2^lca_level / 2^H."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if len(costs) != len(tree.partitions):
        raise ValueError(f"{len(costs)} costs for {len(tree.partitions)} modules")
    if i == j:
        return 0.0
    return math.sqrt(lam) * sum(costs) * 2.0 ** (lca_level(tree, i, j) - tree.height)


def depth_from_costs(
    costs: tuple[float, ...] | list[float],
    lam: float,
    horizon: int,
    num_leaves: int,
) -> tuple[int, ...]:
    """Per-module tree depths from switching costs, lambda, and the horizon.

    For modules m = 1..N-2 the running depth total is
    floor(-log2(tail_{m+1} / total) - log2(lam) / 2) where tail_{m+1} is the
    cost mass of the modules after m; the last depth is
    floor(log2(horizon^(1/3) / log2(num_leaves))) minus what was assigned.
    Negative intermediates clamp to zero with a warning; a negative final
    depth means the horizon is too small for the leaf count.
    """
    costs = tuple(float(c) for c in costs)
    if not costs or any(c <= 0 for c in costs):
        raise ValueError(f"costs must be positive, got {costs}")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if num_leaves < 2:
        raise ValueError(f"need at least 2 leaves, got {num_leaves}")
    total = sum(costs)
    depths: list[int] = []
    assigned = 0
    for m in range(len(costs) - 1):
        tail = sum(costs[m + 1 :])
        target = math.floor(-math.log2(tail / total) - math.log2(lam) / 2.0 + DEPTH_NUDGE)
        d = target - assigned
        if d < 0:
            warnings.warn(f"module {m + 1} depth {d} clamped to 0")
            d = 0
        depths.append(d)
        assigned += d
    last = (
        math.floor(math.log2(horizon ** (1.0 / 3.0) / math.log2(num_leaves)) + DEPTH_NUDGE)
        - assigned
    )
    if last < 0:
        raise HorizonTooSmallError(
            f"horizon {horizon} too small for {num_leaves} leaves "
            f"(final module depth {last})"
        )
    depths.append(last)
    return tuple(depths)


def refine_partition(p: Partition, cell_index: int) -> Partition:
    """Split one cell at the midpoint of its longest edge (ties: lowest dim)."""
    if not 0 <= cell_index < len(p.cells):
        raise ValueError(f"cell index {cell_index} outside [0, {len(p.cells)})")
    cell = np.asarray(p.cells[cell_index], dtype=float)
    j = int(np.argmax(cell[:, 1] - cell[:, 0]))
    mid = 0.5 * (cell[j, 0] + cell[j, 1])
    low, high = cell.copy(), cell.copy()
    low[j, 1] = mid
    high[j, 0] = mid
    cells = list(p.cells)
    cells[cell_index : cell_index + 1] = [low, high]
    return Partition(module=p.module, cells=cells)


def partition_is_valid(p: Partition, bounds: np.ndarray, tol: float = 1e-9) -> bool:
    """Cells lie inside bounds, interiors are disjoint, and volumes add up."""
    bounds = np.asarray(bounds, dtype=float)
    total = float(np.prod(bounds[:, 1] - bounds[:, 0]))
    vol = 0.0
    cells = [np.asarray(c, dtype=float) for c in p.cells]
    for c in cells:
        if np.any(c[:, 0] < bounds[:, 0] - tol) or np.any(c[:, 1] > bounds[:, 1] + tol):
            return False
        vol += float(np.prod(c[:, 1] - c[:, 0]))
    for a in range(len(cells)):
        for b in range(a + 1, len(cells)):
            lo = np.maximum(cells[a][:, 0], cells[b][:, 0])
            hi = np.minimum(cells[a][:, 1], cells[b][:, 1])
            if float(np.prod(np.maximum(hi - lo, 0.0))) > tol * max(total, 1.0):
                return False
    return abs(vol - total) <= tol * max(total, 1.0)


def describe_tree(tree: MSET) -> str:
    """Human-readable nested dump: one line per node with level and cell bounds."""
    children: dict[int, list[int]] = {}
    for nid, par in enumerate(tree.parent):
        if par >= 0:
            children.setdefault(int(par), []).append(nid)
    lines: list[str] = []

    def fmt_cell(module: int, ci: int) -> str:
        cell = tree.partitions[module - 1].cells[ci]
        spans = "x".join(f"[{lo:.4g},{hi:.4g}]" for lo, hi in cell)
        return f" module {module} cell {ci} {spans}"

    def walk(nid: int, indent: int) -> None:
        label = tree.node_labels.get(nid)
        suffix = fmt_cell(*label) if label else ""
        kind = "leaf" if tree.level[nid] == 0 else "node"
        lines.append(f"{'  ' * indent}{kind} {nid} level {tree.level[nid]}{suffix}")
        for c in children.get(nid, []):
            walk(c, indent + 1)

    walk(0, 0)
    return "\n".join(lines)
