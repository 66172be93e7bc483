"""Gaussian-process surrogate and acquisition machinery.

Conventions used throughout:

    posterior mean      mu(x)    = m + k_t(x)^T (K_t + noise*I)^-1 (y_t - m)
    posterior variance  sigma^2(x) = k(x, x) - k_t(x)^T (K_t + noise*I)^-1 k_t(x)

where ``noise`` is the configured observation-noise level added directly to
the Gram matrix diagonal, and ``m`` is a constant prior mean (default 0).

Kernels:

    squared-exponential  k(x, x') = s * exp(-sum(((x - x') / w)^2))
    matern52             k(x, x') = s * (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r),
                         r = ||(x - x') / w||

with signal variance ``s`` (default 1) and a scalar or per-dimension
lengthscale ``w``.

The acquisition is the lower-confidence bound for minimization,
``mu(x) - beta_t * sigma(x)``, with either the practical schedule
``beta_t = scale * D * ln(2 t)`` or the theoretical one
``beta_t = 1 + noise * sqrt(2 * (gamma(t-1) + 1 + ln(1/delta)))`` built on an
analytic information-gain surrogate per kernel family.

Factorizations go through Cholesky with jitter escalation
(0, 1e-10, 1e-8, 1e-6); if all attempts fail a ``SolverError`` is raised.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

JITTERS = (0.0, 1e-10, 1e-8, 1e-6)
VARIANCE_TOLERANCE = 1e-9

# Prior signal variance is never refit (only the lengthscale is), so its
# default has to come from the data: the sample variance of the initial
# design, scaled up so the prior stays loose enough to keep exploring.
SIGNAL_VARIANCE_SCALE = 0.5
SIGNAL_VARIANCE_FLOOR = 1e-8


class SolverError(RuntimeError):
    """Numerical failure in a GP factorization or prediction."""


def calibrate_signal_variance(y_init: np.ndarray | list[float]) -> float:
    """Prior signal variance from the spread of the initial observations."""
    return max(float(np.var(np.asarray(y_init))) * SIGNAL_VARIANCE_SCALE, SIGNAL_VARIANCE_FLOOR)


@dataclass(frozen=True)
class Kernel:
    family: str
    lengthscale: float | np.ndarray
    signal_variance: float = 1.0


@dataclass(frozen=True)
class AcquisitionConfig:
    """Knobs for the confidence-bound schedule and the inner solver."""

    schedule: str = "practical"
    scale: float = 0.2          # multiplier in the practical beta
    delta: float = 0.05         # confidence level in the theoretical beta
    candidates_per_dim: int = 512
    sweeps: int = 3             # coordinate-descent passes after seeding
    line_points: int = 33       # grid size of each coordinate line search


def _scaled(kernel: Kernel, X: np.ndarray) -> np.ndarray:
    w = np.asarray(kernel.lengthscale, dtype=float)
    if np.any(w <= 0):
        raise ValueError(f"lengthscale must be positive, got {kernel.lengthscale}")
    return np.atleast_2d(X) / w


def kernel_matrix(kernel: Kernel, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cross-covariance matrix of shape (len(A), len(B))."""
    A = _scaled(kernel, A)
    B = _scaled(kernel, B)
    if kernel.family == "squared-exponential":
        return kernel.signal_variance * np.exp(-cdist(A, B, "sqeuclidean"))
    if kernel.family == "matern52":
        r = cdist(A, B, "euclidean")
        u = math.sqrt(5.0) * r
        return kernel.signal_variance * (1.0 + u + u * u / 3.0) * np.exp(-u)
    raise ValueError(f"unknown kernel family {kernel.family!r}")


def kernel_eval(kernel: Kernel, x1: np.ndarray, x2: np.ndarray) -> float:
    return float(kernel_matrix(kernel, x1[None, :], x2[None, :])[0, 0])


def _factor(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky of K with jitter escalation; returns (L, jitter used)."""
    for jitter in JITTERS:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(len(K)) if jitter else K)
        except np.linalg.LinAlgError:
            continue
        return L, jitter
    raise SolverError("Cholesky failed after jitter escalation (0, 1e-10, 1e-8, 1e-6)")


@dataclass(frozen=True)
class GPState:
    """Immutable GP posterior state; updates return new states.

    ``chol`` factors K + (noise + jitter) * I for the current observations and
    ``white`` caches chol^-1 (y - prior_mean), so prediction batches need one
    triangular solve each.
    """

    kernel: Kernel
    noise: float
    prior_mean: float = 0.0
    X: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    y: np.ndarray = field(default_factory=lambda: np.empty(0))
    chol: np.ndarray | None = None
    white: np.ndarray | None = None
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return len(self.y)

    def with_data(self, X: np.ndarray, y: np.ndarray) -> "GPState":
        """Batch refit on the given observations (replaces any existing data)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} inputs vs {len(y)} observations")
        if len(y) == 0:
            return replace(self, X=np.empty((0, 0)), y=np.empty(0), chol=None, white=None)
        K = kernel_matrix(self.kernel, X, X) + self.noise * np.eye(len(X))
        L, jitter = _factor(K)
        white = solve_triangular(L, y - self.prior_mean, lower=True)
        return replace(self, X=X, y=y, chol=L, white=white, jitter=jitter)


def gp_init(kernel: Kernel, noise: float, prior_mean: float = 0.0) -> GPState:
    if noise < 0:
        raise ValueError(f"noise must be nonnegative, got {noise}")
    return GPState(kernel=kernel, noise=noise, prior_mean=prior_mean)


def gp_update(g: GPState, x: np.ndarray, y: float) -> GPState:
    """Append one observation, extending the Cholesky factor in O(n^2).

    Falls back to a full refactorization (with jitter escalation) when the
    incremental pivot degenerates, e.g. on duplicated points at zero noise.
    """
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)) or not math.isfinite(y):
        raise ValueError("non-finite observation")
    if g.n == 0:
        return g.with_data(x[None, :], np.array([y]))
    if len(x) != g.X.shape[1]:
        raise ValueError(f"dimension mismatch: {len(x)} vs {g.X.shape[1]}")
    k = kernel_matrix(g.kernel, g.X, x[None, :])[:, 0]
    b = solve_triangular(g.chol, k, lower=True)
    diag = kernel_eval(g.kernel, x, x) + g.noise + g.jitter
    pivot = diag - b @ b
    X = np.vstack([g.X, x])
    y_all = np.append(g.y, y)
    if pivot <= 1e-12 * diag:
        return g.with_data(X, y_all)
    n = g.n
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = g.chol
    L[n, :n] = b
    L[n, n] = math.sqrt(pivot)
    white = np.append(g.white, (y - g.prior_mean - b @ g.white) / L[n, n])
    return replace(g, X=X, y=y_all, chol=L, white=white)


def posterior_predict(g: GPState, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at the query rows of Xq.

    Variances in [-1e-9, 0) are clamped to zero; anything lower raises.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    prior_var = g.kernel.signal_variance
    if g.n == 0:
        return (np.full(len(Xq), g.prior_mean), np.full(len(Xq), prior_var))
    Kq = kernel_matrix(g.kernel, g.X, Xq)
    v = solve_triangular(g.chol, Kq, lower=True)
    mean = g.prior_mean + v.T @ g.white
    var = prior_var - np.einsum("ij,ij->j", v, v)
    bad = var < -VARIANCE_TOLERANCE
    if np.any(bad):
        raise SolverError(f"negative predictive variance {var[bad].min():g}")
    return mean, np.maximum(var, 0.0)


def log_marginal_likelihood(g: GPState) -> float:
    if g.n == 0:
        raise ValueError("no observations")
    return float(
        -0.5 * g.white @ g.white
        - np.log(np.diag(g.chol)).sum()
        - 0.5 * g.n * math.log(2.0 * math.pi)
    )


# ---------------------------------------------------------------------------
# acquisition
# ---------------------------------------------------------------------------


def _gamma_surrogate(t: float, dim: int, family: str) -> float:
    """Analytic stand-in for the maximal information gain at time t."""
    if t < 1:
        return 0.0
    if family == "squared-exponential":
        return math.log(t + 1.0) ** (dim + 1)
    if family == "matern52":
        p = dim * (dim + 1) / (5.0 + dim * (dim + 1))
        return t**p * math.log(t)
    raise ValueError(f"unknown kernel family {family!r}")


def beta_schedule(
    cfg: AcquisitionConfig,
    t: int,
    dim: int,
    noise: float = 0.0,
    kernel: Kernel | None = None,
) -> float:
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if cfg.schedule == "practical":
        return cfg.scale * dim * math.log(2.0 * t)
    if cfg.schedule == "theoretical":
        if kernel is None:
            raise ValueError("theoretical schedule needs the kernel family")
        gamma = _gamma_surrogate(t - 1, dim, kernel.family)
        return 1.0 + noise * math.sqrt(2.0 * (gamma + 1.0 + math.log(1.0 / cfg.delta)))
    raise ValueError(f"unknown beta schedule {cfg.schedule!r}")


def ucb_acquisition(g: GPState, Xq: np.ndarray, beta: float) -> np.ndarray:
    """Confidence-bound acquisition for minimization: mu - beta * sigma."""
    mean, var = posterior_predict(g, Xq)
    return mean - beta * np.sqrt(var)


def minimize_function(
    fn,
    cfg: AcquisitionConfig,
    region: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Minimize a batch-scored function over an axis-aligned box.

    ``fn`` maps an (n, d) array of points to an (n,) array of scores.  Seeds
    with one block of ``candidates_per_dim * d`` uniform draws (so the
    outcome is a pure function of the generator state), keeps the lowest
    candidate breaking ties by index, then runs ``sweeps`` coordinate-descent
    passes of ``line_points``-point line searches, moving only on strict
    improvement.  Degenerate dimensions (lo == hi) stay pinned; a box with
    lo > hi in any dimension is rejected.
    """
    region = np.asarray(region, dtype=float)
    if region.ndim != 2 or region.shape[1] != 2 or region.shape[0] == 0:
        raise ValueError(f"region must be a (d, 2) array, got shape {region.shape}")
    lo, hi = region[:, 0], region[:, 1]
    if np.any(hi < lo):
        raise ValueError("empty region: lower bound exceeds upper bound")
    d = len(lo)
    cands = rng.uniform(lo, hi, size=(cfg.candidates_per_dim * d, d))
    vals = np.asarray(fn(cands), dtype=float)
    best = int(np.argmin(vals))
    x, value = cands[best].copy(), float(vals[best])
    for _ in range(cfg.sweeps):
        for j in range(d):
            if hi[j] == lo[j]:
                continue
            trial = np.tile(x, (cfg.line_points, 1))
            trial[:, j] = np.linspace(lo[j], hi[j], cfg.line_points)
            tv = np.asarray(fn(trial), dtype=float)
            k = int(np.argmin(tv))
            if tv[k] < value:
                x, value = trial[k].copy(), float(tv[k])
    return x, value


def minimize_acquisition(
    g: GPState,
    cfg: AcquisitionConfig,
    region: np.ndarray,
    t: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Minimize the confidence bound over an axis-aligned box.

    Search behavior (candidate seeding, tie-breaking, coordinate descent,
    generator usage) is exactly that of ``minimize_function``.
    """
    region = np.asarray(region, dtype=float)
    if region.ndim != 2 or region.shape[1] != 2 or region.shape[0] == 0:
        raise ValueError(f"region must be a (d, 2) array, got shape {region.shape}")
    beta = beta_schedule(cfg, t, region.shape[0], g.noise, g.kernel)
    return minimize_function(lambda X: ucb_acquisition(g, X, beta), cfg, region, rng)


# ---------------------------------------------------------------------------
# hyperparameter fit
# ---------------------------------------------------------------------------


def mle_hyperparams(g: GPState, grid_points: int = 25) -> GPState:
    """Refit the lengthscale by maximum marginal likelihood on a fixed grid.

    The grid is log-spaced over [1e-2, 1e1] times the input-range scale (the
    largest per-dimension spread of the observed inputs, falling back to 1
    when degenerate).  Requires at least 5 observations, otherwise the state
    is returned unchanged.  Ties within 1e-9 keep the smallest grid value.
    """
    if g.n < 5:
        return g
    spread = float(np.max(g.X.max(axis=0) - g.X.min(axis=0)))
    scale = spread if spread > 0 else 1.0
    grid = np.geomspace(1e-2 * scale, 1e1 * scale, grid_points)
    best_state, best_lml = None, -math.inf
    for w in grid:
        candidate = replace(g, kernel=replace(g.kernel, lengthscale=float(w)))
        candidate = candidate.with_data(g.X, g.y)
        lml = log_marginal_likelihood(candidate)
        if lml > best_lml + 1e-9:
            best_state, best_lml = candidate, lml
    return best_state
