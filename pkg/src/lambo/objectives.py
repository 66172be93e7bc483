"""Synthetic benchmark objectives and modular experiment presets.

Every observation handed to an optimizer goes through the same pipeline:
the raw function value is affinely rescaled so that the registered
minimum maps to 0 and the registered maximum maps to 1, and Gaussian
noise (default std 0.01) is added *after* that rescaling.  The
registered extrema are frozen in ``data/presets.json`` together with a
note on how each number was obtained, so normalization is reproducible
and does not silently drift with re-estimation.

A preset bundles an objective with a modular decomposition of its input
vector: contiguous blocks of coordinates form the modules of a
sequential pipeline, each with a switching cost.  ``seed_partitions``
produces the starting partition used by tree-based optimizers (each
module box bisected once along a random coordinate).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np

from .mset import ModuleSpace, Partition

__all__ = [
    "ObjectiveSpec",
    "Preset",
    "ackley8",
    "evaluate",
    "evaluate_hartmann6",
    "griewank6",
    "hartmann6",
    "make_objective",
    "normalize",
    "objective_names",
    "preset",
    "preset_names",
    "rastrigin6",
    "seed_partitions",
    "true_value",
]

DOMAIN_TOLERANCE = 1e-12

# Standard 4-term Hartmann-6 constants.
_HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMANN_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HARTMANN_P = 1e-4 * np.array(
    [
        [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
        [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
        [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
        [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
    ]
)


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.asarray(x).shape}")
    return X, single


def _maybe_scalar(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


def hartmann6(x: np.ndarray):
    """Hartmann function on [0, 1]^6 (4-term form, minimum ~ -3.32237)."""
    X, single = _as_batch(x, 6)
    sq = (X[:, None, :] - _HARTMANN_P[None, :, :]) ** 2
    inner = np.einsum("kj,nkj->nk", _HARTMANN_A, sq)
    vals = -(np.exp(-inner) @ _HARTMANN_ALPHA)
    return _maybe_scalar(vals, single)


def evaluate_hartmann6(x: np.ndarray) -> float:
    """Scalar Hartmann-6 evaluation of a single 6-vector."""
    return float(hartmann6(np.asarray(x, dtype=float).reshape(6)))


def ackley8(x: np.ndarray):
    """Ackley function on [-32.768, 32.768]^8, minimum 0 at the origin."""
    X, single = _as_batch(x, 8)
    quad = np.sqrt(np.mean(X**2, axis=1))
    cos = np.mean(np.cos(2.0 * np.pi * X), axis=1)
    # grouped so both terms vanish exactly at the origin
    vals = 20.0 * (1.0 - np.exp(-0.2 * quad)) + (math.e - np.exp(cos))
    return _maybe_scalar(vals, single)


def rastrigin6(x: np.ndarray):
    """Rastrigin function on [-5.12, 5.12]^6, minimum 0 at the origin."""
    X, single = _as_batch(x, 6)
    vals = 10.0 * 6 + np.sum(X**2 - 10.0 * np.cos(2.0 * np.pi * X), axis=1)
    return _maybe_scalar(vals, single)


def griewank6(x: np.ndarray):
    """Griewank function on [-600, 600]^6, minimum 0 at the origin."""
    X, single = _as_batch(x, 6)
    denom = np.sqrt(np.arange(1, 7, dtype=float))
    vals = np.sum(X**2, axis=1) / 4000.0 - np.prod(np.cos(X / denom), axis=1) + 1.0
    return _maybe_scalar(vals, single)


_FORMULAS: dict[str, Callable] = {
    "hartmann6": hartmann6,
    "ackley8": ackley8,
    "rastrigin6": rastrigin6,
    "griewank6": griewank6,
}


@dataclass(frozen=True)
class ObjectiveSpec:
    """A benchmark objective plus the frozen constants needed to score it."""

    name: str
    dim: int
    bounds: np.ndarray  # (dim, 2) rows of (lo, hi)
    fn: Callable
    f_min: float
    f_max: float
    minimizer: np.ndarray
    noise_std: float = 0.01
    normalized: bool = True

    @property
    def f_star(self) -> float:
        """Noiseless optimum on the scale ``true_value`` reports."""
        return 0.0 if self.normalized else self.f_min


@dataclass
class Preset:
    """A named experiment configuration: objective + modular decomposition."""

    name: str
    objective: ObjectiveSpec
    modules: list[ModuleSpace]
    costs: tuple[float, ...]  # switching costs c_1 .. c_{N-1}
    lam: float
    split: tuple[int, ...] = field(default=())


@lru_cache(maxsize=1)
def _registry() -> dict:
    with resources.files("lambo.data").joinpath("presets.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def objective_names() -> list[str]:
    return sorted(_registry()["objectives"])


def preset_names() -> list[str]:
    return sorted(_registry()["presets"])


def make_objective(name: str, noise_std: float = 0.01, normalized: bool = True) -> ObjectiveSpec:
    entries = _registry()["objectives"]
    if name not in entries:
        raise ValueError(f"unknown objective {name!r}; available: {', '.join(sorted(entries))}")
    e = entries[name]
    dim = int(e["dim"])
    bounds = np.tile(np.array([e["lo"], e["hi"]], dtype=float), (dim, 1))
    return ObjectiveSpec(
        name=name,
        dim=dim,
        bounds=bounds,
        fn=_FORMULAS[name],
        f_min=float(e["f_min"]),
        f_max=float(e["f_max"]),
        minimizer=np.array(e["minimizer"], dtype=float),
        noise_std=noise_std,
        normalized=normalized,
    )


def _check_domain(spec: ObjectiveSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
    if np.any(x < lo - DOMAIN_TOLERANCE) or np.any(x > hi + DOMAIN_TOLERANCE):
        raise ValueError(f"point {x.tolist()} is outside the domain of {spec.name}")
    return x


def normalize(spec: ObjectiveSpec, value: float) -> float:
    """Affinely map [f_min, f_max] to [0, 1]."""
    span = spec.f_max - spec.f_min
    if span <= 0.0:
        warnings.warn(
            f"objective {spec.name!r} has a degenerate registered range "
            f"[{spec.f_min}, {spec.f_max}]; normalizing to 0.5",
            UserWarning,
            stacklevel=2,
        )
        return 0.5
    return (value - spec.f_min) / span


def true_value(spec: ObjectiveSpec, x: np.ndarray) -> float:
    """Noise-free objective value at ``x`` on the spec's reporting scale."""
    x = _check_domain(spec, x)
    raw = float(np.asarray(spec.fn(x)).item())  # accept scalar or length-1 batch output
    return normalize(spec, raw) if spec.normalized else raw


def evaluate(spec: ObjectiveSpec, x: np.ndarray, rng: np.random.Generator) -> float:
    """Observe the objective at ``x``: true value plus Gaussian noise.

    Noise is added on the reporting scale, i.e. after normalization when
    the spec is normalized.
    """
    v = true_value(spec, x)
    if spec.noise_std > 0.0:
        v += float(rng.normal(0.0, spec.noise_std))
    return v


def preset(name: str) -> Preset:
    """Build a named experiment preset.

    Module boxes are fresh arrays on every call, so presets can be
    refined in place without cross-talk between runs.
    """
    entries = _registry()["presets"]
    if name not in entries:
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(sorted(entries))}")
    e = entries[name]
    spec = make_objective(e["objective"])
    split = tuple(int(s) for s in e["split"])
    if sum(split) != spec.dim:
        raise ValueError(f"preset {name!r}: split {split} does not cover dimension {spec.dim}")
    module_costs = [float(c) for c in e["module_costs"]]
    if len(module_costs) != len(split):
        raise ValueError(f"preset {name!r}: {len(module_costs)} costs for {len(split)} modules")
    modules: list[ModuleSpace] = []
    start = 0
    for d, cost in zip(split, module_costs):
        modules.append(ModuleSpace(bounds=spec.bounds[start : start + d].copy(), cost=cost))
        start += d
    return Preset(
        name=name,
        objective=spec,
        modules=modules,
        costs=tuple(module_costs[:-1]),
        lam=float(e["lambda"]),
        split=split,
    )


def seed_partitions(p: Preset, rng: np.random.Generator) -> list[Partition]:
    """Initial partitions for the switch-cost tree.

    Only modules 1..N-1 are partitioned (the last module never carries a
    switching cost and is re-optimized in full every iteration); each of
    their boxes is bisected once along a random coordinate.
    """
    parts: list[Partition] = []
    for m, mod in enumerate(p.modules[:-1]):
        j = int(rng.integers(mod.bounds.shape[0]))
        mid = 0.5 * (mod.bounds[j, 0] + mod.bounds[j, 1])
        low = mod.bounds.copy()
        high = mod.bounds.copy()
        low[j, 1] = mid
        high[j, 0] = mid
        parts.append(Partition(module=m + 1, cells=[low, high]))
    return parts
