"""Imitation reward: weighted sum of exponentiated squared tracking errors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RewardWeights:
    joint: float = 0.5
    root_position: float = 0.3
    root_orientation: float = 0.1
    spring: float = 0.1

    def __post_init__(self):
        w = self.as_array()
        if (w < 0).any():
            raise ValueError("reward weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"reward weights must sum to 1, got {w.sum()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.joint, self.root_position, self.root_orientation, self.spring])


@dataclass(frozen=True)
class RewardScales:
    """Multipliers on each squared error inside the exponential (1 = unscaled)."""

    joint: float = 1.0
    root_position: float = 1.0
    root_orientation: float = 1.0
    spring: float = 1.0


def tracking_term(err_sq, scale: float = 1.0):
    return np.exp(-scale * np.asarray(err_sq))


def reward_terms(q, q_ref, scales: RewardScales = RewardScales()) -> np.ndarray:
    """The four terms (joint, root position, root orientation, spring) on the last axis.

    ``q`` and ``q_ref`` are generalized positions with any leading batch shape, or
    objects carrying them as ``.q`` (a SimState or a ReferenceFrame).
    """
    q = np.asarray(getattr(q, "q", q), dtype=float)
    q_ref = np.asarray(getattr(q_ref, "q", q_ref), dtype=float)
    d = q - q_ref
    joint = np.sum(d[..., 3:9] ** 2, axis=-1)
    root = np.sum(d[..., 0:2] ** 2, axis=-1)
    pitch = d[..., 2] ** 2
    spring = np.sum(d[..., 9:11] ** 2, axis=-1)
    return np.stack([
        tracking_term(joint, scales.joint),
        tracking_term(root, scales.root_position),
        tracking_term(pitch, scales.root_orientation),
        tracking_term(spring, scales.spring),
    ], axis=-1)


def imitation_reward(q, q_ref, weights: RewardWeights = RewardWeights(),
                     scales: RewardScales = RewardScales()):
    """Reward in (0, 1]; equals 1 exactly when every compared coordinate matches.

    Only positions are compared. Pelvis x is part of the root-position term,
    which is what rewards forward progress along the moving reference.
    """
    return reward_terms(q, q_ref, scales) @ weights.as_array()
