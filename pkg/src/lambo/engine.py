"""Switch-cost-aware optimizer main loop.

One iteration, in order (and this order fixes how the RNG stream is
consumed, which the determinism contract depends on):

1. sample an arm from the bandit, conditioned on the previous subtree;
2. solve one lazy acquisition problem per active arm, in ascending arm
   order: the blocks upstream of the first module where the arm differs
   from the previous arm are pinned bitwise to the previous point, the
   remaining tree blocks range over the arm's cells, and the last
   module's block ranges over its full box;
3. evaluate the chosen arm's candidate on the objective;
4. draw the level signs, convert the arms' acquisition values to base
   losses in [0, 1] (affine map anchored at the running min/max of all
   acquisition values seen so far; a degenerate span maps to 0.5), run
   the soft-average recursion, and apply the multiplicative update;
5. append the observation to the GP (sliding-window refit once the
   window overflows) and charge the movement cost of the modules whose
   prefix actually changed.

Initialization draws ``n_init`` uniform samples over the full space;
each is charged the full switching cost (as if module 1 changed), and
the records count in the cumulative columns but not toward the horizon.

Scheduled heuristics between iterations: arm discarding below
0.2/|leaves| (a discard triggers one cell-refinement stage, at most
``refinement_stages`` per run), per-module depth growth when the
windowed switch frequency exceeds the threshold, probability restarts,
and kernel refits.  Tree rebuilds re-map each old arm's mass uniformly
onto its descendant leaves.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .gp import (
    AcquisitionConfig,
    GPState,
    Kernel,
    beta_schedule,
    calibrate_signal_variance,
    gp_init,
    gp_update,
    minimize_acquisition,
    mle_hyperparams,
    ucb_acquisition,
)
from .mset import MSET, Partition, construct_mset, refine_partition
from .objectives import ObjectiveSpec, evaluate, true_value
from .smb import (
    SMBState,
    advance,
    discard_arms,
    draw_levels,
    loss_estimator,
    multiplicative_update,
    restart_probabilities,
    sample_arm,
    smb_init,
)

__all__ = [
    "CostModel",
    "LamboConfig",
    "ModularPoint",
    "RunTrace",
    "TraceRow",
    "first_differing_module",
    "lazy_base_loss",
    "locate_arm",
    "movement_cost",
    "normalize_base_losses",
    "run_lambo",
]

WINDOW_SLACK = 64  # extra observations accepted before the sliding window refits
LOCATE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ModularPoint:
    """A query point split into per-module variable blocks."""

    blocks: tuple[np.ndarray, ...]

    @classmethod
    def from_flat(cls, x: np.ndarray, split: tuple[int, ...]) -> "ModularPoint":
        x = np.asarray(x, dtype=float).ravel()
        if sum(split) != len(x):
            raise ValueError(f"split {tuple(split)} does not cover {len(x)} values")
        offsets = np.cumsum((0,) + tuple(split))
        return cls(tuple(x[a:b].copy() for a, b in zip(offsets[:-1], offsets[1:])))

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)


@dataclass(frozen=True)
class CostModel:
    """Switching costs c_1..c_{N-1} and the movement trade-off lambda."""

    costs: tuple[float, ...]
    lam: float

    def __post_init__(self) -> None:
        costs = tuple(float(c) for c in self.costs)
        if any(c < 0 for c in costs):
            raise ValueError(f"costs must be non-negative, got {costs}")
        if not any(c > 0 for c in costs):
            raise ValueError("need at least one positive switching cost")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "lam", float(self.lam))


@dataclass(frozen=True)
class LamboConfig:
    """Run parameters; defaults follow the experiment protocol."""

    horizon: int
    eta: float = 1.0
    acq: AcquisitionConfig = AcquisitionConfig(candidates_per_dim=32, sweeps=2, line_points=24)
    n_init: int = 15
    restart_period: int = 25
    depth_growth_period: int = 20
    switch_threshold: float = 0.5
    discard_factor: float = 0.2
    refit_period: int = 15
    depth_mode: str = "fixed-1"
    refinement_stages: int = 2
    window: int = 256
    bandit_feedback: bool = False
    restart_enabled: bool = True
    discard_enabled: bool = True
    depth_growth_enabled: bool = True
    refit_enabled: bool = True
    noise: float = 1e-4  # GP diagonal: observation noise variance
    signal_variance: float | None = None  # None: calibrated from the initial design
    lengthscale_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")
        if self.n_init < 1:
            raise ValueError(f"initial samples count must be >= 1, got {self.n_init}")
        for name in ("restart_period", "depth_growth_period", "refit_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a period >= 1")
        for name in ("switch_threshold", "discard_factor"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} is a threshold factor and must lie in (0, 1], got {v}")
        if self.depth_mode not in ("fixed-1", "cost-derived"):
            raise ValueError(f"depth_mode must be 'fixed-1' or 'cost-derived', got {self.depth_mode!r}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.refinement_stages < 0:
            raise ValueError(f"refinement_stages must be non-negative, got {self.refinement_stages}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class TraceRow:
    t: int
    arm: int
    h: int
    x: np.ndarray
    y: float
    f_true: float
    gamma: float
    cum_cost: float
    simple_regret: float
    cum_regret_plus: float


@dataclass
class RunTrace:
    """Per-iteration records plus the effective configuration snapshot."""

    rows: list[TraceRow]
    config: dict
    events: list[dict]
    n_init: int
    split: tuple[int, ...]


def first_differing_module(tree: MSET, arm_now: int, arm_prev: int) -> int | None:
    """1-based index of the first module whose cell differs; None if identical."""
    diff = np.nonzero(tree.leaf_cells[arm_now] != tree.leaf_cells[arm_prev])[0]
    return int(diff[0]) + 1 if len(diff) else None


def movement_cost(x_now: ModularPoint, x_prev: ModularPoint, cm: CostModel) -> float:
    """Sum of c_m over modules m whose variable prefix 1..m changed.

    Block equality is exact equality of stored values; the last module
    carries no switching cost.
    """
    if len(x_now.blocks) != len(x_prev.blocks):
        raise ValueError(
            f"shape mismatch: {len(x_now.blocks)} blocks vs {len(x_prev.blocks)}"
        )
    if len(x_now.blocks) != len(cm.costs) + 1:
        raise ValueError(
            f"point has {len(x_now.blocks)} modules but the cost model covers "
            f"{len(cm.costs) + 1}"
        )
    total = 0.0
    changed = False
    for m, c in enumerate(cm.costs):
        a, b = x_now.blocks[m], x_prev.blocks[m]
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch in module {m + 1}: {a.shape} vs {b.shape}")
        changed = changed or not np.array_equal(a, b)
        if changed:
            total += c
    return total


def locate_arm(tree: MSET, point: ModularPoint) -> int:
    """Leaf whose cells contain the point's tree blocks (first cell wins on ties)."""
    cells = []
    for mi, part in enumerate(tree.partitions):
        block = point.blocks[mi]
        for k, c in enumerate(part.cells):
            if np.all(block >= c[:, 0] - LOCATE_TOLERANCE) and np.all(
                block <= c[:, 1] + LOCATE_TOLERANCE
            ):
                cells.append(k)
                break
        else:
            raise ValueError(f"no cell of module {part.module} contains block {block.tolist()}")
    match = np.nonzero(np.all(tree.leaf_cells == np.asarray(cells), axis=1))[0]
    return int(match[0])


def lazy_base_loss(
    g: GPState,
    cfg: AcquisitionConfig,
    tree: MSET,
    last_box: np.ndarray,
    arm: int,
    prev_arm: int,
    x_prev: ModularPoint,
    t: int,
    rng: np.random.Generator,
) -> tuple[float, ModularPoint]:
    """Minimize the confidence bound over an arm's lazily restricted box.

    Returns the raw acquisition minimum and the assembled candidate;
    callers map raw values across arms to [0, 1] with
    ``normalize_base_losses`` before feeding the bandit.
    """
    m = first_differing_module(tree, arm, prev_arm)
    pinned = len(tree.partitions) if m is None else m - 1
    rows = []
    for mi in range(len(tree.partitions)):
        if mi < pinned:
            block = x_prev.blocks[mi]
            rows.append(np.column_stack([block, block]))
        else:
            rows.append(tree.partitions[mi].cells[tree.leaf_cells[arm, mi]])
    rows.append(last_box)
    region = np.vstack(rows)
    x, value = minimize_acquisition(g, cfg, region, t, rng)
    split = tuple(r.shape[0] for r in rows)
    return value, ModularPoint.from_flat(x, split)


def normalize_base_losses(
    values: np.ndarray, lo: float | None = None, hi: float | None = None
) -> np.ndarray:
    """Affine map of acquisition values to [0, 1]; a degenerate span maps to 0.5.

    The run loop passes the running extremes of all acquisition values
    seen so far (across arms and iterations) so that the loss scale stays
    stable over time; near-equal values then yield near-equal losses
    instead of being stretched to full contrast.  Without explicit
    bounds the values' own min/max are used.
    """
    values = np.asarray(values, dtype=float)
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    span = hi - lo
    if span <= 0.0:
        return np.full(values.shape, 0.5)
    return np.clip((values - lo) / span, 0.0, 1.0)


# ---------------------------------------------------------------------------
# run state
# ---------------------------------------------------------------------------


@dataclass
class _RunState:
    cfg: LamboConfig
    spec: ObjectiveSpec
    cm: CostModel
    rng: np.random.Generator
    tree: MSET
    smb: SMBState
    g: GPState
    last_box: np.ndarray
    split: tuple[int, ...]
    x_prev: ModularPoint
    X_hist: list = field(default_factory=list)
    y_hist: list = field(default_factory=list)
    acc_regret: float = 0.0
    acc_cost: float = 0.0
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    switch_history: list = field(default_factory=list)
    stages_used: int = 0
    raw_seen_lo: float = math.inf
    raw_seen_hi: float = -math.inf

    def record(self, t: int, arm: int, h: int, x: np.ndarray, y: float, gamma: float) -> None:
        f = true_value(self.spec, x)
        self.acc_regret += f - self.spec.f_star
        self.acc_cost += gamma
        self.rows.append(
            TraceRow(
                t=t,
                arm=arm,
                h=h,
                x=x,
                y=y,
                f_true=f,
                gamma=gamma,
                cum_cost=self.acc_cost,
                simple_regret=f - self.spec.f_star,
                cum_regret_plus=self.acc_regret + self.cm.lam * self.acc_cost,
            )
        )

    def observe(self, x: np.ndarray, y: float) -> None:
        self.X_hist.append(x)
        self.y_hist.append(y)
        if self.g.n >= self.cfg.window + WINDOW_SLACK:
            self.g = self.g.with_data(
                np.asarray(self.X_hist[-self.cfg.window :]),
                np.asarray(self.y_hist[-self.cfg.window :]),
            )
        else:
            self.g = gp_update(self.g, x, y)


def _step(state: _RunState, t: int) -> None:
    cfg, tree, rng = state.cfg, state.tree, state.rng
    arm = sample_arm(state.smb, rng)
    k_total = tree.num_leaves
    active = np.nonzero(state.smb.active)[0]
    raws = np.zeros(k_total)
    base = np.zeros(k_total)
    if cfg.bandit_feedback:
        raw, point = lazy_base_loss(
            state.g, cfg.acq, tree, state.last_box, arm, state.smb.prev_arm, state.x_prev, state.g.n, rng
        )
        state.raw_seen_lo = min(state.raw_seen_lo, raw)
        state.raw_seen_hi = max(state.raw_seen_hi, raw)
        base[arm] = normalize_base_losses(
            np.array([raw]), state.raw_seen_lo, state.raw_seen_hi
        )[0]
    else:
        cands = {}
        for k in active:
            raws[k], cands[k] = lazy_base_loss(
                state.g, cfg.acq, tree, state.last_box, int(k), state.smb.prev_arm, state.x_prev, state.g.n, rng
            )
        state.raw_seen_lo = min(state.raw_seen_lo, float(raws[active].min()))
        state.raw_seen_hi = max(state.raw_seen_hi, float(raws[active].max()))
        base[active] = normalize_base_losses(
            raws[active], state.raw_seen_lo, state.raw_seen_hi
        )
        point = cands[arm]

    m = first_differing_module(tree, arm, state.smb.prev_arm)
    pinned = len(tree.partitions) if m is None else m - 1
    for mi in range(pinned):
        if not np.array_equal(point.blocks[mi], state.x_prev.blocks[mi]):
            raise AssertionError(
                f"laziness violated at t={t}: block {mi + 1} moved with first "
                f"differing module {m}"
            )

    x_flat = point.flat()
    y = evaluate(state.spec, x_flat, rng)
    sigmas, h = draw_levels(state.smb, rng)
    ltilde = loss_estimator(state.smb, base, sigmas)
    state.smb = multiplicative_update(state.smb, ltilde)
    state.observe(x_flat, y)
    gamma = movement_cost(point, state.x_prev, state.cm)

    cells_now = tree.leaf_cells[arm]
    cells_prev = tree.leaf_cells[state.smb.prev_arm]
    state.switch_history.append(cells_now != cells_prev)
    if len(state.switch_history) > cfg.depth_growth_period:
        state.switch_history.pop(0)

    state.record(cfg.n_init + t, arm, h, x_flat, y, gamma)
    state.smb = advance(state.smb, arm, h)
    state.x_prev = point


# ---------------------------------------------------------------------------
# tree rebuilds
# ---------------------------------------------------------------------------


def _rebuild(state: _RunState, partitions: list, depths: tuple, descendants: list) -> None:
    new_tree = construct_mset(partitions, depths)
    p = np.zeros(new_tree.num_leaves)
    active = np.zeros(new_tree.num_leaves, dtype=bool)
    for old, kids in enumerate(descendants):
        p[kids] += state.smb.p[old] / len(kids)
        if state.smb.active[old]:
            active[kids] = True
    total = p.sum()
    p = p / total if total > 0 else active / active.sum()
    fresh = smb_init(new_tree, state.cfg.eta)
    state.tree = new_tree
    state.smb = replace(
        fresh,
        p=p,
        active=active,
        prev_arm=locate_arm(new_tree, state.x_prev),
        prev_level=new_tree.height,
    )
    state.switch_history.clear()


def _refine_active_cells(state: _RunState) -> None:
    """One refinement stage: split every cell still used by an active arm."""
    tree, smb = state.tree, state.smb
    new_parts: list[Partition] = []
    children_per_module: list[list[list[int]]] = []
    for mi, part in enumerate(tree.partitions):
        used = np.zeros(len(part.cells), dtype=bool)
        used[tree.leaf_cells[smb.active, mi]] = True
        cells: list[np.ndarray] = []
        children: list[list[int]] = []
        for k, c in enumerate(part.cells):
            if used[k]:
                halves = refine_partition(Partition(part.module, [c.copy()]), 0).cells
                children.append([len(cells), len(cells) + 1])
                cells.extend(halves)
            else:
                children.append([len(cells)])
                cells.append(c)
        new_parts.append(Partition(part.module, cells))
        children_per_module.append(children)
    depths = tuple(
        max(d, math.ceil(math.log2(len(p.cells)))) if len(p.cells) > 1 else max(d, 0)
        for d, p in zip(tree.depths, new_parts)
    )
    new_tree_cells = {  # map a cell tuple to its leaf index in the new tree
        tuple(row): i for i, row in enumerate(construct_mset(new_parts, depths).leaf_cells)
    }
    descendants = []
    for leaf in range(tree.num_leaves):
        combos = [[]]
        for mi in range(len(tree.partitions)):
            kids = children_per_module[mi][tree.leaf_cells[leaf, mi]]
            combos = [c + [k] for c in combos for k in kids]
        descendants.append([new_tree_cells[tuple(c)] for c in combos])
    _rebuild(state, new_parts, depths, descendants)


def _maybe_grow_depths(state: _RunState, t: int) -> None:
    if not state.switch_history:
        return
    freqs = np.mean(np.asarray(state.switch_history, dtype=float), axis=0)
    grow = [mi for mi, f in enumerate(freqs) if f > state.cfg.switch_threshold]
    if not grow:
        return
    depths = tuple(
        d + (1 if mi in grow else 0) for mi, d in enumerate(state.tree.depths)
    )
    identity = [[i] for i in range(state.tree.num_leaves)]
    modules = [state.tree.partitions[mi].module for mi in grow]
    _rebuild(state, state.tree.partitions, depths, identity)
    state.events.append(
        {"t": t, "kind": "depth", "detail": f"modules {modules} -> depths {depths}"}
    )


# ---------------------------------------------------------------------------
# main entry point
# ---------------------------------------------------------------------------


def run_lambo(
    cfg: LamboConfig,
    spec: ObjectiveSpec,
    tree: MSET,
    cm: CostModel,
    rng: np.random.Generator,
) -> RunTrace:
    """Run the full loop: initialization, ``horizon`` steps, scheduled heuristics."""
    tree_dims = tuple(p.cells[0].shape[0] for p in tree.partitions)
    lead = sum(tree_dims)
    if lead >= spec.dim:
        raise ValueError(
            f"tree covers {lead} of {spec.dim} dimensions; the last module needs at least one"
        )
    if len(cm.costs) != len(tree.partitions):
        raise ValueError(f"{len(cm.costs)} costs for a tree over {len(tree.partitions)} modules")
    split = (*tree_dims, spec.dim - lead)
    last_box = spec.bounds[lead:].copy()

    init_cost = float(sum(cm.costs))
    X_init, y_init = [], []
    for _ in range(cfg.n_init):
        x = rng.uniform(spec.bounds[:, 0], spec.bounds[:, 1])
        X_init.append(x)
        y_init.append(evaluate(spec, x, rng))
    prior_mean = float(np.mean(y_init))
    sv = cfg.signal_variance if cfg.signal_variance is not None else calibrate_signal_variance(y_init)
    kernel = Kernel(
        "squared-exponential",
        cfg.lengthscale_fraction * (spec.bounds[:, 1] - spec.bounds[:, 0]),
        sv,
    )
    g = gp_init(kernel, cfg.noise, prior_mean).with_data(np.asarray(X_init), np.asarray(y_init))

    # Seed the running acquisition extremes from the initial design so the
    # first steps are normalized against a realistic span.  Starting from an
    # empty range would map the very first per-arm losses to {0, 1} and let a
    # handful of noisy early steps collapse the arm probabilities.
    beta0 = beta_schedule(cfg.acq, g.n, spec.dim, cfg.noise, kernel)
    init_acq = ucb_acquisition(g, np.asarray(X_init), beta0)

    x_prev = ModularPoint.from_flat(X_init[-1], split)
    smb = advance(smb_init(tree, cfg.eta), locate_arm(tree, x_prev), tree.height)
    state = _RunState(
        cfg=cfg,
        spec=spec,
        cm=cm,
        rng=rng,
        tree=tree,
        smb=smb,
        g=g,
        last_box=last_box,
        split=split,
        x_prev=x_prev,
        X_hist=list(X_init),
        y_hist=list(y_init),
        raw_seen_lo=float(init_acq.min()),
        raw_seen_hi=float(init_acq.max()),
    )
    for i, (x, y) in enumerate(zip(X_init, y_init)):
        state.record(i + 1, -1, -1, x, y, init_cost)

    for t in range(1, cfg.horizon + 1):
        _step(state, t)
        if cfg.discard_enabled:
            threshold = cfg.discard_factor / state.tree.num_leaves
            pruned = discard_arms(state.smb, threshold)
            if not np.array_equal(pruned.active, state.smb.active):
                dropped = np.nonzero(state.smb.active & ~pruned.active)[0]
                state.smb = pruned
                state.events.append(
                    {"t": t, "kind": "discard", "detail": f"arms {dropped.tolist()}"}
                )
                if state.stages_used < cfg.refinement_stages:
                    _refine_active_cells(state)
                    state.stages_used += 1
                    state.events.append(
                        {"t": t, "kind": "refine", "detail": f"stage {state.stages_used}"}
                    )
        if cfg.depth_growth_enabled and t % cfg.depth_growth_period == 0:
            _maybe_grow_depths(state, t)
        if cfg.restart_enabled and t % cfg.restart_period == 0:
            state.smb = restart_probabilities(state.smb)
            state.events.append({"t": t, "kind": "restart", "detail": ""})
        if cfg.refit_enabled and t % cfg.refit_period == 0:
            state.g = mle_hyperparams(state.g)
            state.events.append({"t": t, "kind": "refit", "detail": ""})

    config = {
        "objective": spec.name,
        "lambda": cm.lam,
        "costs": list(cm.costs),
        "f_star": spec.f_star,
        "f_star_source": "registered",
        "init_counts_toward_horizon": False,
        "init_in_cumulative_columns": True,
        **asdict(cfg),
    }
    return RunTrace(
        rows=state.rows, config=config, events=state.events, n_init=cfg.n_init, split=split
    )
