"""Comparison optimizers sharing the GP surrogate and the trace format.

Four methods: ``gp-ucb`` (confidence-bound descent over the full space),
``gp-ei`` (expected improvement over the full space), ``random`` (uniform
sampling), and ``ei-per-cost`` (expected improvement per unit switching
cost).  All charge movement cost with the same rule as the main loop and
emit the same RunTrace rows, with the arm and level columns set to -1.

The cost-aware method scores a candidate by EI(x) / (kappa + Gamma(x,
x_prev)) with kappa the smallest positive module cost (keeping the
denominator away from zero).  Because any continuous proposal almost
surely changes every module, it would otherwise collapse onto plain EI;
we therefore solve one acquisition problem per prefix-freeze level
(pinning the first m-1 module blocks to the previous query, m = 1..N)
and keep the best-scoring candidate across levels.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .engine import CostModel, ModularPoint, RunTrace, TraceRow, movement_cost
from .gp import (
    AcquisitionConfig,
    GPState,
    Kernel,
    calibrate_signal_variance,
    gp_init,
    gp_update,
    minimize_acquisition,
    minimize_function,
    mle_hyperparams,
    posterior_predict,
)
from .objectives import ObjectiveSpec, evaluate, true_value

__all__ = ["METHODS", "BaselineConfig", "ei_acquisition", "ei_per_cost", "run_baseline"]

METHODS = ("gp-ucb", "gp-ei", "random", "ei-per-cost")
WINDOW_SLACK = 64  # keep in sync with the main loop's sliding-window policy

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BaselineConfig:
    """Run parameters for a baseline; GP settings mirror the main loop."""

    method: str
    horizon: int
    split: tuple[int, ...]
    n_init: int = 15
    acq: AcquisitionConfig = AcquisitionConfig(candidates_per_dim=32, sweeps=2, line_points=24)
    refit_period: int = 15
    refit_enabled: bool = True
    window: int = 256
    noise: float = 1e-4
    signal_variance: float | None = None  # None: calibrated from the initial design
    lengthscale_fraction: float = 0.2
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")
        if self.n_init < 1:
            raise ValueError(f"initial samples count must be >= 1, got {self.n_init}")
        split = tuple(int(s) for s in self.split)
        if len(split) < 2 or any(s < 1 for s in split):
            raise ValueError(f"split needs at least two positive block sizes, got {split}")
        if self.refit_period < 1:
            raise ValueError("refit_period must be a period >= 1")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        object.__setattr__(self, "split", split)


def ei_acquisition(g: GPState, Xq: np.ndarray, best: float) -> np.ndarray:
    """Expected improvement E[max(best - f, 0)] under the posterior, per row.

    At sigma = 0 this is the deterministic limit max(best - mu, 0).
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    mu, var = posterior_predict(g, Xq)
    s = np.sqrt(var)
    gap = best - mu
    out = np.maximum(gap, 0.0)
    pos = s > 0
    if np.any(pos):
        z = gap[pos] / s[pos]
        out[pos] = gap[pos] * ndtr(z) + s[pos] * np.exp(-0.5 * z * z) / SQRT_2PI
    return np.maximum(out, 0.0)


def ei_per_cost(
    g: GPState,
    Xq: np.ndarray,
    best: float,
    x_prev: ModularPoint,
    cm: CostModel,
) -> np.ndarray:
    """EI(x) / (kappa + movement cost from x_prev), kappa = min positive cost."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    split = tuple(len(b) for b in x_prev.blocks)
    kappa = min(c for c in cm.costs if c > 0)
    ei = ei_acquisition(g, Xq, best)
    gammas = np.array(
        [movement_cost(ModularPoint.from_flat(row, split), x_prev, cm) for row in Xq]
    )
    return ei / (kappa + gammas)


def _propose(
    method: str,
    g: GPState,
    cfg: BaselineConfig,
    spec: ObjectiveSpec,
    cm: CostModel,
    x_prev: ModularPoint,
    best: float,
    rng: np.random.Generator,
) -> np.ndarray:
    bounds = spec.bounds
    if method == "random":
        return rng.uniform(bounds[:, 0], bounds[:, 1])
    if method == "gp-ucb":
        x, _ = minimize_acquisition(g, cfg.acq, bounds, g.n, rng)
        return x
    if method == "gp-ei":
        x, _ = minimize_function(lambda X: -ei_acquisition(g, X, best), cfg.acq, bounds, rng)
        return x
    # ei-per-cost: one solve per prefix-freeze level, best score wins
    offsets = np.cumsum((0,) + cfg.split)
    best_x, best_neg = None, math.inf
    for frozen in range(len(cfg.split)):
        region = bounds.copy()
        for mi in range(frozen):
            block = x_prev.blocks[mi]
            region[offsets[mi] : offsets[mi + 1]] = np.column_stack([block, block])
        x, neg = minimize_function(
            lambda X: -ei_per_cost(g, X, best, x_prev, cm), cfg.acq, region, rng
        )
        if neg < best_neg:
            best_x, best_neg = x, neg
    return best_x


@dataclass
class _BaselineState:
    """Accounting mirror of the main loop's run state (parity is test-enforced)."""

    cfg: BaselineConfig
    spec: ObjectiveSpec
    cm: CostModel
    g: GPState
    X_hist: list = field(default_factory=list)
    y_hist: list = field(default_factory=list)
    acc_regret: float = 0.0
    acc_cost: float = 0.0
    rows: list = field(default_factory=list)

    def record(self, t: int, x: np.ndarray, y: float, gamma: float) -> None:
        f = true_value(self.spec, x)
        self.acc_regret += f - self.spec.f_star
        self.acc_cost += gamma
        self.rows.append(
            TraceRow(
                t=t,
                arm=-1,
                h=-1,
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


def run_baseline(
    cfg: BaselineConfig,
    spec: ObjectiveSpec,
    cm: CostModel,
    rng: np.random.Generator | None = None,
) -> RunTrace:
    """Standard loop: fit, optimize the acquisition over the full space, evaluate.

    Initialization, movement-cost charging, the sliding GP window, and the
    refit schedule all follow the main loop; ``rng`` overrides ``cfg.seed``
    when given (the harness passes per-run generators).
    """
    if sum(cfg.split) != spec.dim:
        raise ValueError(f"split {cfg.split} does not cover {spec.dim} dimensions")
    if len(cm.costs) != len(cfg.split) - 1:
        raise ValueError(
            f"{len(cm.costs)} switching costs for {len(cfg.split)} modules"
        )
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    bounds = spec.bounds
    X_init, y_init = [], []
    for _ in range(cfg.n_init):
        x = rng.uniform(bounds[:, 0], bounds[:, 1])
        X_init.append(x)
        y_init.append(evaluate(spec, x, rng))
    prior_mean = float(np.mean(y_init))
    sv = cfg.signal_variance if cfg.signal_variance is not None else calibrate_signal_variance(y_init)
    kernel = Kernel(
        "squared-exponential",
        cfg.lengthscale_fraction * (bounds[:, 1] - bounds[:, 0]),
        sv,
    )
    g = gp_init(kernel, cfg.noise, prior_mean).with_data(np.asarray(X_init), np.asarray(y_init))

    state = _BaselineState(cfg=cfg, spec=spec, cm=cm, g=g, X_hist=list(X_init), y_hist=list(y_init))
    init_cost = float(sum(cm.costs))
    for i, (x, y) in enumerate(zip(X_init, y_init)):
        state.record(i + 1, x, y, init_cost)
    x_prev = ModularPoint.from_flat(X_init[-1], cfg.split)

    for t in range(1, cfg.horizon + 1):
        best = float(min(state.y_hist))
        x = _propose(cfg.method, state.g, cfg, spec, cm, x_prev, best, rng)
        point = ModularPoint.from_flat(x, cfg.split)
        y = evaluate(spec, x, rng)
        state.observe(x, y)
        gamma = movement_cost(point, x_prev, cm)
        state.record(cfg.n_init + t, x, y, gamma)
        x_prev = point
        if cfg.refit_enabled and t % cfg.refit_period == 0:
            state.g = mle_hyperparams(state.g)

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
    return RunTrace(rows=state.rows, config=config, events=[], n_init=cfg.n_init, split=cfg.split)
