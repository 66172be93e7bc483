"""Slowly-moving bandit over the leaves of a cost-encoding tree.

State is a probability vector over arms plus the previous draw (arm and
level).  Each round:

  * the next arm is sampled from p conditioned on the previous arm's subtree
    at the previously drawn level,
  * i.i.d. signs sigma_0..sigma_{H-1} are drawn, the next level is the first
    -1 (with the virtual sigma_H = -1 closing the recursion),
  * per-level losses follow the soft-average recursion

        lbar_h(i) = -(1/eta) * log( sum_{j in A_h(i)} p(j)
                       * exp(-eta * (1 + sigma_{h-1}) * lbar_{h-1}(j)) / p(A_h(i)) )

    upward from lbar_0 = base, and the surrogate loss assembles as

        ltilde = lbar_0 + sum_{h=0}^{H-1} sigma_h * lbar_h

    so a -1 at level 0 cancels the whole estimate and the probability vector
    freezes exactly when the sampler is pinned to the previous arm,
  * weights update multiplicatively: p <- p * exp(-eta * ltilde) / Z.

Per-level losses obey 0 <= lbar_h <= prod_{j<h}(1 + sigma_j) for unit base
losses; both ends are asserted (with 1e-9 slack for round-off, then clamped
exact) every time they are computed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .mset import MSET, subtree_arms

log = logging.getLogger(__name__)

BOUND_TOLERANCE = 1e-9


class ContractViolationError(RuntimeError):
    """A loss estimate escaped its guaranteed range."""


@dataclass
class SMBState:
    tree: MSET
    eta: float
    p: np.ndarray
    active: np.ndarray
    prev_arm: int
    prev_level: int
    # per level: leaf -> contiguous group id, and group start offsets
    group_ids: list[np.ndarray]
    group_starts: list[np.ndarray]


def smb_init(tree: MSET, eta: float) -> SMBState:
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    k = tree.num_leaves
    group_ids, group_starts = [], []
    for h in range(tree.height + 1):
        anc = tree.leaf_ancestors[:, h]
        _, starts, inv = np.unique(anc, return_index=True, return_inverse=True)
        group_ids.append(inv)
        group_starts.append(np.sort(starts))
    return SMBState(
        tree=tree,
        eta=eta,
        p=np.full(k, 1.0 / k),
        active=np.ones(k, dtype=bool),
        prev_arm=0,
        prev_level=tree.height,
        group_ids=group_ids,
        group_starts=group_starts,
    )


def advance(s: SMBState, arm: int, level: int) -> SMBState:
    """Record the committed draw (arm, level) for the next round's window."""
    if not s.active[arm]:
        raise ValueError(f"arm {arm} is not active")
    if not 0 <= level <= s.tree.height:
        raise ValueError(f"level {level} outside [0, {s.tree.height}]")
    return replace(s, prev_arm=int(arm), prev_level=int(level))


def sample_arm(s: SMBState, rng: np.random.Generator) -> int:
    """Draw from p conditioned on the previous subtree (active arms only)."""
    members = np.asarray(subtree_arms(s.tree, s.prev_arm, s.prev_level))
    members = members[s.active[members]]
    mass = s.p[members]
    total = mass.sum()
    if total <= 0.0:
        log.debug("zero mass in conditioning subtree; falling back to uniform")
        probs = np.full(len(members), 1.0 / len(members))
    else:
        probs = mass / total
    return int(rng.choice(members, p=probs))


def draw_levels(s: SMBState, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """i.i.d. signs over levels 0..H-1 and the first -1 index (H if none)."""
    sigmas = rng.integers(0, 2, size=s.tree.height) * 2 - 1
    minus = np.nonzero(sigmas == -1)[0]
    h = int(minus[0]) if len(minus) else s.tree.height
    return sigmas, h


def level_losses(
    s: SMBState,
    base: np.ndarray,
    sigmas: np.ndarray,
    base_bound: float = 1.0,
) -> np.ndarray:
    """Per-level losses lbar_0..lbar_H as an (H+1, K) array.

    ``base`` must be finite within [0, base_bound]; arms in zero-mass groups
    get 0 (their weight is zero, so the value never matters).
    """
    base = np.asarray(base, dtype=float)
    k = s.tree.num_leaves
    if base.shape != (k,):
        raise ValueError(f"base must have shape ({k},), got {base.shape}")
    if not np.all(np.isfinite(base)):
        raise ValueError("non-finite base losses")
    if base.min() < -BOUND_TOLERANCE or base.max() > base_bound + BOUND_TOLERANCE:
        raise ValueError(f"base losses outside [0, {base_bound}]")
    height = s.tree.height
    if len(sigmas) != height:
        raise ValueError(f"need {height} signs, got {len(sigmas)}")
    lbar = np.zeros((height + 1, k))
    lbar[0] = np.clip(base, 0.0, base_bound)
    bound = base_bound
    for h in range(1, height + 1):
        if sigmas[h - 1] == -1:
            break  # this and all higher levels are exactly zero
        z = -2.0 * s.eta * lbar[h - 1]
        zeff = np.where(s.p > 0, z, -np.inf)
        starts = s.group_starts[h]
        gmax = np.maximum.reduceat(zeff, starts)
        safe = np.where(np.isfinite(gmax), gmax, 0.0)
        ids = s.group_ids[h]
        contrib = np.where(np.isfinite(zeff), s.p * np.exp(zeff - safe[ids]), 0.0)
        num = np.add.reduceat(contrib, starts)
        mass = np.add.reduceat(s.p, starts)
        with np.errstate(divide="ignore", invalid="ignore"):
            # zero-mass groups produce nan here and are masked out by the where
            vals = np.where(
                mass > 0, -(safe + np.log(num) - np.log(mass)) / s.eta, 0.0
            )
        row = vals[ids]
        bound *= 1.0 + sigmas[h - 1]
        if row.min() < -BOUND_TOLERANCE or row.max() > bound + BOUND_TOLERANCE:
            raise ContractViolationError(
                f"level {h} losses escaped [0, {bound}]: "
                f"min {row.min():g}, max {row.max():g}"
            )
        lbar[h] = np.clip(row, 0.0, bound)
    return lbar


def loss_estimator(
    s: SMBState,
    base: np.ndarray,
    sigmas: np.ndarray,
    base_bound: float = 1.0,
) -> np.ndarray:
    """Surrogate losses for every arm: lbar_0 + sum_h sigma_h * lbar_h."""
    lbar = level_losses(s, base, sigmas, base_bound)
    height = s.tree.height
    if height == 0:
        return lbar[0].copy()
    signs = np.asarray(sigmas, dtype=float)
    return lbar[0] + signs @ lbar[:height]


def multiplicative_update(
    s: SMBState, ltilde: np.ndarray, floor: float | None = None
) -> SMBState:
    """Exponential-weights step p <- p * exp(-eta * ltilde) / Z.

    Estimates are guaranteed above -max(1/eta, 2^H) for unit base losses;
    anything lower is a contract violation.
    """
    ltilde = np.asarray(ltilde, dtype=float)
    if not np.all(np.isfinite(ltilde)):
        raise ValueError("non-finite loss estimates")
    if floor is None:
        floor = max(1.0 / s.eta, 2.0**s.tree.height)
    if ltilde.min() < -floor - BOUND_TOLERANCE:
        raise ContractViolationError(
            f"loss estimate {ltilde.min():g} below the guaranteed floor {-floor:g}"
        )
    u = -s.eta * ltilde
    w = s.p * np.exp(u - u.max())
    total = w.sum()
    if total <= 0:
        raise ContractViolationError("all updated weights vanished")
    return replace(s, p=w / total)


def discard_arms(s: SMBState, threshold: float) -> SMBState:
    """Deactivate arms below threshold (never the current arm) and renormalize.

    The tree is untouched: pruned leaves keep zero mass and drop out of the
    conditional sampler.  If every active arm sits below the threshold the
    call is a logged no-op.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    if np.all(s.p[s.active] < threshold):
        log.debug("all active arms below %g; discard skipped", threshold)
        return s
    below = s.active & (s.p < threshold)
    below[s.prev_arm] = False
    if not below.any():
        return s
    active = s.active & ~below
    p = np.where(below, 0.0, s.p)
    total = p.sum()
    if total <= 0:
        p = active / active.sum()
    else:
        p = p / total
    log.debug("discarded %d arms below %g", int(below.sum()), threshold)
    return replace(s, p=p, active=active)


def restart_probabilities(s: SMBState) -> SMBState:
    """Reset p to uniform over the active arms."""
    p = s.active / s.active.sum()
    return replace(s, p=p.astype(float))
