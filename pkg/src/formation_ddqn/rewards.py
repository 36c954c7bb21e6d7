"""Shaped reward functions for the reaching and keeping models.

Two continuous state-action rewards drive training: ``reach_reward``
(target attraction minus the strongest obstacle term) and ``keep_reward``
(target attraction only, used once the formation slot is reached). The
state-only variant exists for the reward-design comparison experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .geometry import ACTION_ANGLES, angular_difference


@dataclass(frozen=True)
class RewardConfig:
    n_actions: int = 8
    n_negative_actions: int = 5  # actions counted as moving the wrong way
    obstacle_epsilon: float = 0.1  # meters, keeps the obstacle factor finite at contact

    def __post_init__(self):
        if not 0 < self.n_negative_actions < self.n_actions:
            raise ValueError("n_negative_actions must be in (0, n_actions)")


@dataclass(frozen=True)
class RewardBreakdown:
    """Target term, strongest obstacle term, and their combination."""

    target_term: float
    obstacle_max: float
    total: float


def distance_reward(d: float) -> float:
    """Exponential distance factor 2**d. Grows with distance to the target."""
    if d < 0:
        raise ValueError(f"negative distance: {d}")
    return 2.0 ** d


def alignment_reward(entity_bearing: float, action: int, cfg: RewardConfig) -> float:
    """Directional factor in [-5/8, 3/8] for taking ``action`` relative to an entity.

    Positive iff the wrap-aware angle between the action direction and the
    entity bearing is below (1 - n_neg/n_a) * pi, i.e. 3*pi/8 at defaults.
    """
    delta = angular_difference(entity_bearing, ACTION_ANGLES[action])
    return 1.0 - delta / math.pi - cfg.n_negative_actions / cfg.n_actions


def target_reward(to_target: tuple[float, float], action: int, cfg: RewardConfig) -> float:
    """Reward for moving toward the target: distance factor times alignment."""
    d, theta = to_target
    return distance_reward(d) * alignment_reward(theta, action, cfg)


def obstacle_reward(to_obstacle: tuple[float, float], action: int, cfg: RewardConfig) -> float:
    """Obstacle term: 2**(1/(d + eps)) times alignment with the obstacle bearing.

    Large and positive when moving toward a close obstacle; the distance
    factor is capped at 2**(1/eps) (1024 at defaults) by the epsilon offset.
    """
    d, theta = to_obstacle
    if d < 0:
        raise ValueError(f"negative distance: {d}")
    return 2.0 ** (1.0 / (d + cfg.obstacle_epsilon)) * alignment_reward(theta, action, cfg)


def reach_reward(
    obstacles: Iterable[tuple[float, float]],
    to_target: tuple[float, float],
    action: int,
    cfg: RewardConfig,
) -> RewardBreakdown:
    """Formation-reaching reward: target term minus the maximum obstacle term.

    ``obstacles`` holds (distance, bearing) pairs for every other agent in
    the world, deliberately broader than the two-obstacle observation. An
    empty iterable contributes nothing.
    """
    r_t = target_reward(to_target, action, cfg)
    r_o = [obstacle_reward(o, action, cfg) for o in obstacles]
    if r_o:
        r_o_max = max(r_o)
        return RewardBreakdown(r_t, r_o_max, r_t - r_o_max)
    return RewardBreakdown(r_t, 0.0, r_t)


def keep_reward(to_target: tuple[float, float], action: int, cfg: RewardConfig) -> float:
    """Formation-keeping reward: target term only, obstacles ignored."""
    return target_reward(to_target, action, cfg)


def state_only_reward(to_target: tuple[float, float]) -> float:
    """Action-blind baseline: minus the distance to the target.

    Only used by the reward-design comparison; the proportionality constant
    is -1 so that distance is penalized.
    """
    d = to_target[0]
    if d < 0:
        raise ValueError(f"negative distance: {d}")
    return -d
