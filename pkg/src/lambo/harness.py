"""Seeded, replicated experiment runner and trace emitter.

A config names a preset, a method list, a horizon, a replication count,
and a master seed.  Each (method, run) pair gets its own generator,
derived as ``SeedSequence((master_seed, method_registry_index,
run_index))`` — the registry is the fixed tuple below, so adding methods
to a config never perturbs the streams of existing ones.  Replications
may run on a process pool (``LAMBO_WORKERS`` or the ``workers``
argument); results are sorted on (method, run_id) before anything is
written, so output bytes are independent of execution order.

Outputs: one CSV per completed run (columns, in order: run_id, method,
t, arm, h_t, x_1..x_D, y, f_true, gamma_t, cum_cost, simple_regret,
cum_regret_plus; '.' decimal separator, repr round-trip floats, LF line
endings, UTF-8) plus ``summary.json`` holding the effective config,
per-method best-so-far regret curves against iteration and against
cumulative cost (with and without the initialization cost — the paper's
figures don't say which, so both are emitted), and per-run failures,
which are recorded without aborting the remaining runs.
"""
from __future__ import annotations

import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .baselines import METHODS as BASELINE_METHODS
from .baselines import BaselineConfig, run_baseline
from .engine import CostModel, LamboConfig, RunTrace, TraceRow, run_lambo
from .mset import construct_mset
from .objectives import preset, preset_names, seed_partitions

__all__ = [
    "METHOD_REGISTRY",
    "ExperimentConfig",
    "emit_movement_regret_curve",
    "load_traces",
    "parse_config",
    "run_experiment",
]

METHOD_REGISTRY = ("lambo", "gp-ucb", "gp-ei", "random", "ei-per-cost")
DEFAULT_HORIZON = 300
DEFAULT_REPLICATIONS = 100
DEFAULT_TOGGLES = {"restart": True, "discard": True, "depth_growth": True, "refit": True}
COST_GRID_POINTS = 64

_CONFIG_KEYS = ("preset", "methods", "horizon", "replications", "seed", "lambda", "output", "toggles")
_ENGINE_DEFAULTS = LamboConfig(horizon=0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Effective experiment settings; every field has its default applied."""

    preset: str
    methods: tuple[str, ...]
    horizon: int = DEFAULT_HORIZON
    replications: int = DEFAULT_REPLICATIONS
    seed: int = 0
    lam: float | None = None  # None: use the preset's lambda
    output: str = "results"
    toggles: dict | None = None

    def __post_init__(self) -> None:
        if self.toggles is None:
            object.__setattr__(self, "toggles", dict(DEFAULT_TOGGLES))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.preset not in preset_names():
            raise ValueError(f"unknown preset {self.preset!r}; choose from {preset_names()}")
        if not self.methods:
            raise ValueError("methods must be a non-empty list")
        for m in self.methods:
            if m not in METHOD_REGISTRY:
                raise ValueError(f"unknown method {m!r}; choose from {METHOD_REGISTRY}")
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        unknown = set(self.toggles) - set(DEFAULT_TOGGLES)
        if unknown:
            raise ValueError(f"unknown toggles {sorted(unknown)}; known: {sorted(DEFAULT_TOGGLES)}")


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def _line_of(text: str, key: str) -> str:
    for i, line in enumerate(text.split("\n"), start=1):
        if re.match(rf"\s*{re.escape(str(key))}\s*:", line):
            return f"line {i}: {line.strip()}"
    return "line unknown"


def _expect(raw: dict, text: str, key: str, kind: type, default):
    if key not in raw:
        return default
    value = raw[key]
    if isinstance(value, bool) and kind is not bool or not isinstance(value, kind):
        raise ValueError(
            f"{key} must be a {kind.__name__} ({_line_of(text, key)}), got {value!r}"
        )
    return value


def parse_config(path) -> ExperimentConfig:
    """Parse a YAML experiment file into an ExperimentConfig with defaults filled.

    Keys: preset, methods, horizon, replications, seed, lambda, output,
    toggles.{restart,discard,depth_growth,refit}.  Anything else is an
    error naming the key and its line.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ValueError(f"malformed config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise ValueError(f"malformed config {path}: expected a key-value mapping")
    for key in raw:
        if key not in _CONFIG_KEYS:
            raise ValueError(f"unknown key {key!r} ({_line_of(text, key)})")
    for key in ("preset", "methods"):
        if key not in raw:
            raise ValueError(f"missing required key {key!r} in {path}")

    name = _expect(raw, text, "preset", str, None)
    methods = raw["methods"]
    if not isinstance(methods, list) or not methods:
        raise ValueError(f"methods must be a non-empty list ({_line_of(text, 'methods')})")
    horizon = _expect(raw, text, "horizon", int, DEFAULT_HORIZON)
    replications = _expect(raw, text, "replications", int, DEFAULT_REPLICATIONS)
    seed = _expect(raw, text, "seed", int, 0)
    lam = raw.get("lambda")
    if lam is not None and not isinstance(lam, (int, float)):
        raise ValueError(f"lambda must be a number ({_line_of(text, 'lambda')}), got {lam!r}")
    output = _expect(raw, text, "output", str, "results")
    toggles = dict(DEFAULT_TOGGLES)
    if "toggles" in raw:
        sub = raw["toggles"]
        if not isinstance(sub, dict):
            raise ValueError(f"toggles must be a mapping ({_line_of(text, 'toggles')})")
        for key, value in sub.items():
            if key not in DEFAULT_TOGGLES:
                raise ValueError(f"unknown key toggles.{key!r} ({_line_of(text, key)})")
            if not isinstance(value, bool):
                raise ValueError(f"toggles.{key} must be a boolean ({_line_of(text, key)})")
            toggles[key] = value

    try:
        return ExperimentConfig(
            preset=name,
            methods=tuple(methods),
            horizon=horizon,
            replications=replications,
            seed=seed,
            lam=None if lam is None else float(lam),
            output=output,
            toggles=toggles,
        )
    except ValueError as err:  # attach line context to range/membership errors
        key = str(err).split(" ", 2)[1] if str(err).startswith("unknown") else str(err).split(" ", 1)[0]
        raise ValueError(f"{err} ({_line_of(text, key)})") from err


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------


def _run_generator(master_seed: int, method: str, run_id: int) -> np.random.Generator:
    entropy = (master_seed, METHOD_REGISTRY.index(method), run_id)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _execute_run(cfg: ExperimentConfig, method: str, run_id: int) -> RunTrace:
    p = preset(cfg.preset)
    lam = p.lam if cfg.lam is None else cfg.lam
    cm = CostModel(p.costs, lam)
    rng = _run_generator(cfg.seed, method, run_id)
    if method == "lambo":
        partitions = seed_partitions(p, rng)
        tree = construct_mset(partitions, (1,) * len(partitions))
        lcfg = LamboConfig(
            horizon=cfg.horizon,
            restart_enabled=cfg.toggles["restart"],
            discard_enabled=cfg.toggles["discard"],
            depth_growth_enabled=cfg.toggles["depth_growth"],
            refit_enabled=cfg.toggles["refit"],
        )
        return run_lambo(lcfg, p.objective, tree, cm, rng)
    bcfg = BaselineConfig(
        method=method,
        horizon=cfg.horizon,
        split=p.split,
        refit_enabled=cfg.toggles["refit"],
    )
    return run_baseline(bcfg, p.objective, cm, rng=rng)


def _run_task(cfg: ExperimentConfig, task: tuple[str, int]):
    method, run_id = task
    try:
        return method, run_id, _execute_run(cfg, method, run_id)
    except Exception as err:  # recorded in the summary; other runs continue
        return method, run_id, f"{type(err).__name__}: {err}"


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------


def _trace_lines(trace: RunTrace, method: str, run_id: int) -> list[str]:
    dim = len(trace.rows[0].x)
    header = (
        ["run_id", "method", "t", "arm", "h_t"]
        + [f"x_{i}" for i in range(1, dim + 1)]
        + ["y", "f_true", "gamma_t", "cum_cost", "simple_regret", "cum_regret_plus"]
    )
    lines = [",".join(header)]
    for r in trace.rows:
        fields = [str(run_id), method, str(r.t), str(r.arm), str(r.h)]
        fields += [repr(float(v)) for v in r.x]
        fields += [
            repr(float(r.y)),
            repr(float(r.f_true)),
            repr(float(r.gamma)),
            repr(float(r.cum_cost)),
            repr(float(r.simple_regret)),
            repr(float(r.cum_regret_plus)),
        ]
        lines.append(",".join(fields))
    return lines


def write_trace_csv(path: Path, trace: RunTrace, method: str, run_id: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(_trace_lines(trace, method, run_id)) + "\n")


def read_trace_csv(path) -> tuple[str, RunTrace]:
    """Rebuild (method, trace) from an emitted CSV; n_init is left at 0."""
    lines = Path(path).read_text(encoding="utf-8").strip("\n").split("\n")
    header = lines[0].split(",")
    xcols = [i for i, name in enumerate(header) if name.startswith("x_")]
    col = {name: i for i, name in enumerate(header)}
    rows, method = [], None
    for line in lines[1:]:
        parts = line.split(",")
        method = parts[col["method"]]
        rows.append(
            TraceRow(
                t=int(parts[col["t"]]),
                arm=int(parts[col["arm"]]),
                h=int(parts[col["h_t"]]),
                x=np.array([float(parts[i]) for i in xcols]),
                y=float(parts[col["y"]]),
                f_true=float(parts[col["f_true"]]),
                gamma=float(parts[col["gamma_t"]]),
                cum_cost=float(parts[col["cum_cost"]]),
                simple_regret=float(parts[col["simple_regret"]]),
                cum_regret_plus=float(parts[col["cum_regret_plus"]]),
            )
        )
    trace = RunTrace(rows=rows, config={"method": method}, events=[], n_init=0, split=())
    return method, trace


def load_traces(trace_dir, n_init: int | None = None) -> list[RunTrace]:
    """Read every trace CSV in a directory; n_init comes from summary.json unless given."""
    trace_dir = Path(trace_dir)
    paths = sorted(trace_dir.glob("*.csv"))
    if not paths:
        raise ValueError(f"no trace CSVs found in {trace_dir}")
    if n_init is None:
        summary_path = trace_dir / "summary.json"
        if summary_path.exists():
            n_init = json.loads(summary_path.read_text(encoding="utf-8"))["config"]["n_init"]
        else:
            n_init = _ENGINE_DEFAULTS.n_init
    traces = []
    for path in paths:
        _, trace = read_trace_csv(path)
        trace.n_init = n_init
        traces.append(trace)
    return traces


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def _stderr(values: np.ndarray, axis=0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    if n < 2:
        return np.zeros(values.mean(axis=axis).shape)
    return values.std(axis=axis, ddof=1) / math.sqrt(n)


def _best_so_far(trace: RunTrace) -> np.ndarray:
    return np.minimum.accumulate([r.simple_regret for r in trace.rows])


def _sample_step_curve(xs: np.ndarray, vs: np.ndarray, grid: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(xs, grid, side="right") - 1
    return vs[np.clip(idx, 0, len(vs) - 1)]


def _cost_curve(traces: list[RunTrace], post_init: bool) -> dict:
    xs_all, vs_all = [], []
    for trace in traces:
        cost = np.array([r.cum_cost for r in trace.rows])
        best = _best_so_far(trace)
        if post_init:
            k = trace.n_init - 1
            xs_all.append(cost[k:] - cost[k])
            vs_all.append(best[k:])
        else:
            xs_all.append(cost)
            vs_all.append(best)
    lo = max(x[0] for x in xs_all)
    hi = min(x[-1] for x in xs_all)
    grid = np.linspace(lo, hi, COST_GRID_POINTS) if hi > lo else np.array([hi])
    samples = np.array([_sample_step_curve(x, v, grid) for x, v in zip(xs_all, vs_all)])
    return {
        "grid": [float(v) for v in grid],
        "mean": [float(v) for v in samples.mean(axis=0)],
        "stderr": [float(v) for v in _stderr(samples)],
    }


def _iteration_curve(traces: list[RunTrace], horizon: int) -> dict:
    samples = []
    for trace in traces:
        best = _best_so_far(trace)
        samples.append(best[trace.n_init - 1 : trace.n_init + horizon])
    samples = np.array(samples)
    return {
        "t": list(range(horizon + 1)),
        "mean": [float(v) for v in samples.mean(axis=0)],
        "stderr": [float(v) for v in _stderr(samples)],
    }


def _method_summary(traces: list[RunTrace], runs: int, horizon: int) -> dict:
    if not traces:
        empty = {"grid": [], "mean": [], "stderr": []}
        return {
            "runs": runs,
            "completed": 0,
            "final": {"regret_mean": None, "regret_stderr": None, "cost_mean": None},
            "curves": {
                "iteration": {"t": [], "mean": [], "stderr": []},
                "cost_with_init": dict(empty),
                "cost_post_init": dict(empty),
            },
        }
    finals = np.array([_best_so_far(t)[-1] for t in traces])
    costs = np.array([t.rows[-1].cum_cost for t in traces])
    return {
        "runs": runs,
        "completed": len(traces),
        "final": {
            "regret_mean": float(finals.mean()),
            "regret_stderr": float(_stderr(finals)),
            "cost_mean": float(costs.mean()),
        },
        "curves": {
            "iteration": _iteration_curve(traces, horizon),
            "cost_with_init": _cost_curve(traces, post_init=False),
            "cost_post_init": _cost_curve(traces, post_init=True),
        },
    }


def summary_schema() -> dict:
    return json.loads(
        resources.files("lambo").joinpath("schemas/summary.schema.json").read_text(encoding="utf-8")
    )


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[Path]:
    """Run replications × methods, write trace CSVs and summary.json.

    Returns the written paths.  Execution order never affects output
    bytes: results are collected and sorted on (method, run_id) first.
    """
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if workers is None:
        workers = int(os.environ.get("LAMBO_WORKERS", "1"))
    tasks = [(m, r) for m in cfg.methods for r in range(cfg.replications)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(partial(_run_task, cfg), tasks, chunksize=1))
    else:
        results = [_run_task(cfg, task) for task in tasks]
    results.sort(key=lambda item: (METHOD_REGISTRY.index(item[0]), item[1]))

    completed: dict[str, list] = {m: [] for m in cfg.methods}
    failures = []
    written = []
    for method, run_id, outcome in results:
        if isinstance(outcome, str):
            failures.append({"method": method, "run_id": run_id, "error": outcome})
            continue
        completed[method].append(outcome)
        path = out / f"{method}_run{run_id:03d}.csv"
        write_trace_csv(path, outcome, method, run_id)
        written.append(path)

    lam = preset(cfg.preset).lam if cfg.lam is None else cfg.lam
    summary = {
        "config": {
            "preset": cfg.preset,
            "methods": list(cfg.methods),
            "horizon": cfg.horizon,
            "replications": cfg.replications,
            "seed": cfg.seed,
            "lambda": float(lam),
            "output": cfg.output,
            "toggles": dict(cfg.toggles),
            "n_init": _ENGINE_DEFAULTS.n_init,
        },
        "methods": {
            m: _method_summary(completed[m], cfg.replications, cfg.horizon) for m in cfg.methods
        },
        "failures": failures,
        "traces": [p.name for p in written],
    }
    jsonschema.validate(summary, summary_schema())
    summary_path = out / "summary.json"
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(summary_path)
    return sorted(written)


def emit_movement_regret_curve(traces, horizons) -> list[dict]:
    """Table of (method, T, mean R+_T / T, stderr, runs) at requested horizons.

    ``traces`` is a list of RunTrace grouped by their config's method
    name; every trace must cover the largest requested horizon.
    """
    horizons = sorted(int(T) for T in horizons)
    if not horizons or horizons[0] < 1:
        raise ValueError(f"horizons must be positive integers, got {horizons}")
    groups: dict[str, list[RunTrace]] = {}
    for trace in traces:
        groups.setdefault(trace.config.get("method", "lambo"), []).append(trace)
    table = []
    for method in sorted(groups):
        for T in horizons:
            values = []
            for trace in groups[method]:
                idx = trace.n_init + T - 1
                if idx >= len(trace.rows):
                    raise ValueError(
                        f"horizon {T} exceeds trace length "
                        f"({len(trace.rows) - trace.n_init} steps)"
                    )
                values.append(trace.rows[idx].cum_regret_plus / T)
            values = np.array(values)
            table.append(
                {
                    "method": method,
                    "horizon": T,
                    "mean": float(values.mean()),
                    "stderr": float(_stderr(values)),
                    "runs": len(values),
                }
            )
    return table
