"""Tests for the synthetic benchmark functions and experiment presets.

The Hartmann oracle below is an independent scalar re-implementation
(math + explicit loops) so agreement with the vectorized version is a
real cross-check rather than the same code evaluated twice.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from lambo.mset import partition_is_valid
from lambo.objectives import (
    ObjectiveSpec,
    ackley8,
    evaluate,
    evaluate_hartmann6,
    griewank6,
    hartmann6,
    make_objective,
    normalize,
    objective_names,
    preset,
    preset_names,
    rastrigin6,
    seed_partitions,
    true_value,
)

# Independent Hartmann-6 oracle: same published constants, scalar math.
_ALPHA = (1.0, 1.2, 3.0, 3.2)
_A = (
    (10.0, 3.0, 17.0, 3.5, 1.7, 8.0),
    (0.05, 10.0, 17.0, 0.1, 8.0, 14.0),
    (3.0, 3.5, 1.7, 10.0, 17.0, 8.0),
    (17.0, 8.0, 0.05, 10.0, 0.1, 14.0),
)
_P = (
    (0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886),
    (0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991),
    (0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650),
    (0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381),
)


def hartmann6_oracle(x):
    total = 0.0
    for i in range(4):
        inner = 0.0
        for j in range(6):
            inner += _A[i][j] * (x[j] - _P[i][j]) ** 2
        total += _ALPHA[i] * math.exp(-inner)
    return -total


def test_hartmann6_matches_independent_oracle():
    rng = np.random.default_rng(7)
    X = rng.uniform(0.0, 1.0, size=(200, 6))
    vals = hartmann6(X)
    for x, v in zip(X, vals):
        assert abs(v - hartmann6_oracle(x)) <= 1e-12


def test_hartmann6_scalar_entry_point():
    x = np.full(6, 0.5)
    assert evaluate_hartmann6(x) == pytest.approx(hartmann6_oracle(x), abs=1e-12)
    assert isinstance(evaluate_hartmann6(x), float)


def test_hartmann6_registered_minimum():
    spec = make_objective("hartmann6")
    v = evaluate_hartmann6(spec.minimizer)
    assert v == pytest.approx(-3.32237, abs=1e-5)
    assert v == pytest.approx(spec.f_min, abs=1e-9)


def test_hartmann6_never_beats_registered_minimum():
    rng = np.random.default_rng(11)
    X = rng.uniform(0.0, 1.0, size=(20000, 6))
    assert hartmann6(X).min() >= -3.32238


def test_origin_minima_are_exact():
    assert ackley8(np.zeros(8)) == pytest.approx(0.0, abs=1e-12)
    assert rastrigin6(np.zeros(6)) == pytest.approx(0.0, abs=1e-12)
    assert griewank6(np.zeros(6)) == pytest.approx(0.0, abs=1e-12)


def test_rastrigin_hand_value():
    # 60 + sum(x_i^2 - 10 cos(2 pi x_i)) at x = (1, 0, ..., 0): cos(2 pi) = 1,
    # so the sum is (1 - 10) + 5 * (-10) + 60 = 1.
    x = np.zeros(6)
    x[0] = 1.0
    assert rastrigin6(x) == pytest.approx(1.0, abs=1e-9)


def test_griewank_hand_value():
    # sum x^2/4000 - prod cos(x_i/sqrt(i)) + 1 at x = (pi*sqrt(1), 0, ...):
    # cos(pi) = -1, other factors 1, so value = pi^2/4000 + 2.
    x = np.zeros(6)
    x[0] = math.pi
    expected = math.pi**2 / 4000.0 + 2.0
    assert griewank6(x) == pytest.approx(expected, abs=1e-12)


def test_ackley_hand_value():
    # At x = (a, ..., a): -20 exp(-0.2 |a|) - exp(cos(2 pi a)) + 20 + e.
    a = 0.5
    x = np.full(8, a)
    expected = -20.0 * math.exp(-0.2 * a) - math.exp(math.cos(2 * math.pi * a)) + 20.0 + math.e
    assert ackley8(x) == pytest.approx(expected, abs=1e-12)


def test_batch_and_single_evaluation_agree():
    for fn, d, lo, hi in (
        (hartmann6, 6, 0.0, 1.0),
        (ackley8, 8, -32.768, 32.768),
        (rastrigin6, 6, -5.12, 5.12),
        (griewank6, 6, -600.0, 600.0),
    ):
        rng = np.random.default_rng(3)
        X = rng.uniform(lo, hi, size=(16, d))
        batch = fn(X)
        assert batch.shape == (16,)
        for i in range(16):
            assert fn(X[i]) == pytest.approx(batch[i], abs=1e-12)


def test_spec_fields_and_registry():
    assert set(objective_names()) == {"hartmann6", "ackley8", "rastrigin6", "griewank6"}
    spec = make_objective("ackley8")
    assert spec.dim == 8
    assert spec.bounds.shape == (8, 2)
    assert np.all(spec.bounds[:, 0] == -32.768)
    assert np.all(spec.bounds[:, 1] == 32.768)
    assert spec.noise_std == 0.01
    assert spec.f_min == 0.0
    with pytest.raises(ValueError, match="unknown objective"):
        make_objective("rosenbrock")


def test_normalize_maps_registered_range_to_unit():
    spec = make_objective("hartmann6")
    assert normalize(spec, spec.f_min) == pytest.approx(0.0, abs=1e-12)
    assert normalize(spec, spec.f_max) == pytest.approx(1.0, abs=1e-12)
    mid = 0.5 * (spec.f_min + spec.f_max)
    assert normalize(spec, mid) == pytest.approx(0.5, abs=1e-12)


def test_normalize_degenerate_range_warns_and_returns_half():
    spec = ObjectiveSpec(
        name="flat",
        dim=1,
        bounds=np.array([[0.0, 1.0]]),
        fn=lambda x: np.zeros(np.atleast_2d(x).shape[0]),
        f_min=2.0,
        f_max=2.0,
        minimizer=np.zeros(1),
    )
    with pytest.warns(UserWarning, match="degenerate"):
        assert normalize(spec, 2.0) == 0.5


def test_true_value_is_normalized_and_noise_free():
    spec = make_objective("hartmann6")
    v = true_value(spec, spec.minimizer)
    assert v == pytest.approx(0.0, abs=1e-12)
    raw = make_objective("hartmann6", normalized=False)
    assert true_value(raw, raw.minimizer) == pytest.approx(raw.f_min, abs=1e-12)


def test_evaluate_noiseless_matches_true_value():
    spec = make_objective("rastrigin6", noise_std=0.0)
    rng = np.random.default_rng(0)
    x = rng.uniform(-5.12, 5.12, size=6)
    assert evaluate(spec, x, rng) == true_value(spec, x)


def test_evaluate_noise_statistics():
    spec = make_objective("griewank6")
    rng = np.random.default_rng(5)
    x = np.full(6, 100.0)
    base = true_value(spec, x)
    draws = np.array([evaluate(spec, x, rng) for _ in range(4000)])
    resid = draws - base
    assert abs(resid.mean()) < 4 * 0.01 / math.sqrt(4000)
    assert resid.std() == pytest.approx(0.01, rel=0.1)


def test_evaluate_noise_applied_after_normalization():
    # Noise std stays 0.01 on the normalized scale regardless of the raw range.
    spec = make_objective("griewank6")
    rng = np.random.default_rng(9)
    x = np.full(6, 100.0)
    draws = np.array([evaluate(spec, x, rng) for _ in range(2000)])
    assert draws.std() < 0.02  # raw-scale noise would be invisible; this checks scale


def test_evaluate_rejects_out_of_domain():
    spec = make_objective("hartmann6")
    bad = np.full(6, 1.5)
    with pytest.raises(ValueError, match="outside the domain"):
        evaluate(spec, bad, np.random.default_rng(0))
    with pytest.raises(ValueError, match="outside the domain"):
        true_value(spec, bad)


def test_preset_names_cover_the_benchmark_grid():
    names = preset_names()
    for expected in (
        "hartmann-2mod-10:1",
        "hartmann-2mod-1:1",
        "rastrigin-2mod-10:1",
        "griewank-2mod-10:1",
        "ackley-2mod-10:1",
        "ackley-2mod-10:1-split26",
        "ackley-2mod-10:1-split44",
        "ackley-3mod-40:10:1",
    ):
        assert expected in names


def test_unknown_preset_lists_available_names():
    with pytest.raises(ValueError, match="hartmann-2mod-10:1"):
        preset("hartmann-5mod")


def test_hartmann_preset_structure():
    p = preset("hartmann-2mod-10:1")
    assert p.objective.name == "hartmann6"
    assert p.objective.dim == 6
    assert [m.bounds.shape[0] for m in p.modules] == [3, 3]
    assert [m.cost for m in p.modules] == [10.0, 1.0]
    assert p.costs == (10.0,)
    assert p.lam == 0.1
    stacked = np.vstack([m.bounds for m in p.modules])
    assert np.array_equal(stacked, p.objective.bounds)


def test_three_module_preset_structure():
    p = preset("ackley-3mod-40:10:1")
    assert [m.bounds.shape[0] for m in p.modules] == [2, 2, 4]
    assert p.costs == (40.0, 10.0)
    assert [m.cost for m in p.modules] == [40.0, 10.0, 1.0]


def test_ackley_split_variants_partition_all_eight_dims():
    for name, split in (
        ("ackley-2mod-10:1", [6, 2]),
        ("ackley-2mod-10:1-split26", [2, 6]),
        ("ackley-2mod-10:1-split44", [4, 4]),
    ):
        p = preset(name)
        assert [m.bounds.shape[0] for m in p.modules] == split


def test_seed_partitions_cover_switching_modules_only():
    # The last module carries no switching cost and stays unpartitioned.
    p = preset("hartmann-2mod-10:1")
    parts = seed_partitions(p, np.random.default_rng(21))
    assert len(parts) == len(p.modules) - 1
    assert [part.module for part in parts] == [1]
    for part, mod in zip(parts, p.modules[:-1]):
        assert len(part.cells) == 2
        assert partition_is_valid(part, mod.bounds)
        # Exactly one coordinate was halved; the others span the full box.
        diff = [
            j
            for j in range(mod.bounds.shape[0])
            if not (
                part.cells[0][j, 0] == mod.bounds[j, 0]
                and part.cells[0][j, 1] == mod.bounds[j, 1]
            )
        ]
        assert len(diff) == 1
        j = diff[0]
        mid = 0.5 * (mod.bounds[j, 0] + mod.bounds[j, 1])
        assert part.cells[0][j, 1] == mid
        assert part.cells[1][j, 0] == mid


def test_seed_partitions_deterministic_given_seed():
    p = preset("ackley-3mod-40:10:1")
    a = seed_partitions(p, np.random.default_rng(4))
    b = seed_partitions(p, np.random.default_rng(4))
    assert len(a) == 2  # three modules, two carry switching costs
    for pa, pb in zip(a, b):
        for ca, cb in zip(pa.cells, pb.cells):
            assert np.array_equal(ca, cb)


def test_preset_objects_are_independent():
    a = preset("hartmann-2mod-10:1")
    b = preset("hartmann-2mod-10:1")
    assert a is not b
    a.modules[0].bounds[0, 0] = -1.0
    assert b.modules[0].bounds[0, 0] == 0.0
