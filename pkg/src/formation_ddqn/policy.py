"""Dual-model execution: reach network until arrival, keep network after.

The mode transition is hysteretic: reaching hands over to keeping inside
switch_radius, and only a departure beyond release_radius hands control back.
That keeps the controller from chattering while the follower oscillates
around its slot.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Vec2, action_direction, scale
from .network import Network, forward
from .world import Observation, normalize_observation


class Mode(enum.Enum):
    REACHING = "reaching"
    KEEPING = "keeping"


@dataclass(frozen=True)
class DualPolicy:
    reach_net: Network
    keep_net: Network
    switch_radius: float = 0.1
    release_radius: float = 0.25
    mode: Mode = Mode.REACHING

    def __post_init__(self):
        if self.switch_radius <= 0.0:
            raise ValueError("switch_radius must be positive")
        if self.release_radius < self.switch_radius:
            raise ValueError(
                f"release_radius ({self.release_radius}) must be >= "
                f"switch_radius ({self.switch_radius})")


def policy_action(policy: DualPolicy, obs: Observation, d_max: float):
    """Greedy action of the active network; returns (action, updated policy).

    The mode updates from the target distance before the network is chosen,
    so the step that crosses switch_radius already acts under the keep net.
    Mode never depends on q-values.
    """
    d = obs.to_target.distance
    mode = policy.mode
    if mode is Mode.REACHING and d <= policy.switch_radius:
        mode = Mode.KEEPING
    elif mode is Mode.KEEPING and d > policy.release_radius:
        mode = Mode.REACHING
    if mode is not policy.mode:
        policy = replace(policy, mode=mode)
    net = policy.reach_net if mode is Mode.REACHING else policy.keep_net
    q = forward(net, normalize_observation(obs, d_max))
    return int(np.argmax(q)), policy


def follower_velocity(action: int, follower_speed: float) -> Vec2:
    """Constant-speed velocity along the chosen compass direction."""
    if follower_speed < 0.0:
        raise ValueError("follower_speed must be >= 0")
    return scale(action_direction(action), follower_speed)
