"""Quick self-check suite behind ``lambo verify``.

Each check exercises one of the library's load-bearing invariants at a
scale of seconds (the test suite runs the same properties harder):
GP posterior vs a dense solve, the level-loss bounds and unbiasedness
of the bandit estimator, switch locality, the depth formulas with the
HST dominance property, lazy cost accounting, and byte-determinism of
the experiment runner.
"""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from .engine import CostModel, LamboConfig, run_lambo
from .gp import AcquisitionConfig, Kernel, gp_init, kernel_matrix, posterior_predict
from .harness import ExperimentConfig, run_experiment
from .mset import Partition, construct_mset, depth_from_costs, hst_distance
from .objectives import preset, seed_partitions
from .smb import (
    advance,
    draw_levels,
    level_losses,
    loss_estimator,
    multiplicative_update,
    sample_arm,
    smb_init,
)

__all__ = ["run_checks"]


def _grid_partitions(cells_per_module: tuple[int, ...]) -> list[Partition]:
    parts = []
    for m, n in enumerate(cells_per_module, start=1):
        edges = np.linspace(0.0, 1.0, n + 1)
        parts.append(
            Partition(m, [np.array([[edges[i], edges[i + 1]]]) for i in range(n)])
        )
    return parts


def check_gp_dense_oracle() -> tuple[str, bool, str]:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        d, n = 3, 8
        X = rng.uniform(size=(n, d))
        y = rng.normal(size=n)
        kernel = Kernel("squared-exponential", float(rng.uniform(0.2, 0.8)), 1.0)
        noise = 1e-4
        g = gp_init(kernel, noise, 0.3).with_data(X, y)
        Xq = rng.uniform(size=(20, d))
        K = kernel_matrix(kernel, X, X) + noise * np.eye(n)
        kq = kernel_matrix(kernel, Xq, X)
        alpha = np.linalg.solve(K, y - 0.3)
        mu_ref = 0.3 + kq @ alpha
        var_ref = kernel_matrix(kernel, Xq, Xq).diagonal() - np.einsum(
            "ij,ji->i", kq, np.linalg.solve(K, kq.T)
        )
        mu, var = posterior_predict(g, Xq)
        worst = max(worst, np.abs(mu - mu_ref).max(), np.abs(var - var_ref).max())
    return "gp-dense-oracle", worst <= 1e-8, f"max abs error {worst:.2e} (tol 1e-8)"


def check_level_loss_bounds() -> tuple[str, bool, str]:
    rng = np.random.default_rng(1)
    tree = construct_mset(_grid_partitions((3, 2)), (2, 1))
    s = advance(smb_init(tree, 1.0), 0, tree.height)
    try:
        for _ in range(2000):
            arm = sample_arm(s, rng)
            base = rng.uniform(size=tree.num_leaves)
            sigmas, h = draw_levels(s, rng)
            level_losses(s, base, sigmas)  # raises if any bound is violated
            s = multiplicative_update(s, loss_estimator(s, base, sigmas))
            s = advance(s, arm, h)
    except Exception as err:  # noqa: BLE001 - report, don't crash the suite
        return "bandit-level-bounds", False, f"violated: {err}"
    return "bandit-level-bounds", True, "2000 steps on a 6-leaf tree, bounds held"


def check_unbiased_estimator() -> tuple[str, bool, str]:
    rng = np.random.default_rng(2)
    tree = construct_mset(_grid_partitions((4,)), (2,))
    s = advance(smb_init(tree, 1.0), 1, tree.height)
    base = np.array([0.15, 0.6, 0.35, 0.9])
    episodes = 20000
    weighted = np.empty(episodes)
    sampled = np.empty(episodes)
    for e in range(episodes):
        arm = sample_arm(s, rng)
        sigmas, _ = draw_levels(s, rng)
        ltilde = loss_estimator(s, base, sigmas)
        weighted[e] = float(s.p @ ltilde)
        sampled[e] = float(ltilde[arm])
    diff = weighted.mean() - sampled.mean()
    se = np.sqrt(weighted.var(ddof=1) / episodes + sampled.var(ddof=1) / episodes)
    ok = abs(diff) <= 4 * se
    return "bandit-unbiasedness", ok, f"|E[p.l] - E[l(i)]| = {abs(diff):.4f} vs 4se = {4 * se:.4f}"


def check_switch_locality() -> tuple[str, bool, str]:
    rng = np.random.default_rng(3)
    tree = construct_mset(_grid_partitions((16,)), (4,))
    s = advance(smb_init(tree, 1.0), 0, tree.height)
    steps = 20000
    arms = np.empty(steps + 1, dtype=int)
    arms[0] = s.prev_arm
    for t in range(steps):
        arm = sample_arm(s, rng)
        _, h = draw_levels(s, rng)
        s = advance(s, arm, h)
        arms[t + 1] = arm
    worst = ""
    for level in range(1, tree.height + 1):
        anc = s.group_ids[level][arms]
        freq = float(np.mean(anc[1:] != anc[:-1]))
        bound = 2.0 ** (-level)
        se = np.sqrt(freq * (1 - freq) / steps)
        if freq > bound + 3 * se:
            worst = f"level {level}: {freq:.4f} > {bound:.4f} + 3se"
            return "switch-locality", False, worst
    return "switch-locality", True, f"{steps} steps, all {tree.height} levels within bound"


def check_depth_formulas() -> tuple[str, bool, str]:
    depths = depth_from_costs((40.0, 10.0), 1.0, 10**6, 8)
    if depths != (2, 3):
        return "depth-formulas", False, f"expected (2, 3), got {depths}"
    tree = construct_mset(_grid_partitions((2, 2)), depths)
    costs, lam = (40.0, 10.0), 1.0
    for i in range(tree.num_leaves):
        for j in range(tree.num_leaves):
            if i == j:
                continue
            m = int(np.nonzero(tree.leaf_cells[i] != tree.leaf_cells[j])[0][0])
            tail = sum(costs[m:])
            dist = hst_distance(tree, costs, lam, i, j)
            if dist / np.sqrt(lam) < tail - 1e-9:
                return (
                    "depth-formulas",
                    False,
                    f"dominance failed for arms ({i}, {j}): {dist:.3f} < {tail:.3f}",
                )
    return "depth-formulas", True, "hand values match; dominance holds on all arm pairs"


def check_lazy_accounting() -> tuple[str, bool, str]:
    p = preset("hartmann-2mod-10:1")
    rng = np.random.default_rng(4)
    tree = construct_mset(seed_partitions(p, rng), (1,))
    cfg = LamboConfig(
        horizon=10,
        n_init=5,
        acq=AcquisitionConfig(candidates_per_dim=8, sweeps=1, line_points=5),
    )
    trace = run_lambo(cfg, p.objective, tree, CostModel(p.costs, p.lam), rng)
    sr = np.array([r.simple_regret for r in trace.rows])
    cost = np.array([r.gamma for r in trace.rows])
    rplus = np.array([r.cum_regret_plus for r in trace.rows])
    err = np.abs(rplus - (np.cumsum(sr) + p.lam * np.cumsum(cost))).max()
    return "lazy-accounting", err <= 1e-12, f"max decomposition error {err:.2e} (tol 1e-12)"


def check_experiment_determinism() -> tuple[str, bool, str]:
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for sub in ("a", "b"):
            cfg = ExperimentConfig(
                preset="hartmann-2mod-10:1",
                methods=("random",),
                horizon=5,
                replications=2,
                seed=7,
                output=str(Path(tmp) / sub),
            )
            files = run_experiment(cfg)
            outs.append({p.name: p.read_bytes() for p in files if p.suffix == ".csv"})
    ok = outs[0] == outs[1]
    return "experiment-determinism", ok, "rerun with same master seed is byte-identical"


def run_checks() -> list[tuple[str, bool, str]]:
    return [
        check_gp_dense_oracle(),
        check_level_loss_bounds(),
        check_unbiased_estimator(),
        check_switch_locality(),
        check_depth_formulas(),
        check_lazy_accounting(),
        check_experiment_determinism(),
    ]
