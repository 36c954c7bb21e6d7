"""2D multi-robot world: single-integrator agents, leader motion, observations.

Everything here is a pure value transformation except LeaderController, which
carries waypoint / random-walk state between calls. Positions are metres,
time is seconds, and one world step applies each agent's velocity command for
a fixed dt, clamping to the square arena.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import (Vec2, add, bearing, distance, norm, scale, sub,
                       vec2, wrap_angle)

# padding distance for missing obstacle slots: far enough that the obstacle
# penalty term is within ~0.7% of its far-field floor
D_FAR = 100.0

CIRCLE_WAYPOINTS = 64
WAYPOINT_TOLERANCE = 0.05


class Role(enum.Enum):
    LEADER = "leader"
    FOLLOWER = "follower"
    OBSTACLE = "obstacle"


class CommandError(ValueError):
    """A leader/follower command is missing or violates the speed contract."""


class WorldBuildError(ValueError):
    """Agent roster is inconsistent (duplicate ids, wrong leader count)."""


class AgentState(NamedTuple):
    agent_id: int
    role: Role
    position: Vec2
    velocity: Vec2 = Vec2(0.0, 0.0)


class WorldState(NamedTuple):
    agents: tuple
    time: float
    step_count: int


class RangeBearing(NamedTuple):
    distance: float
    bearing: float


class Observation(NamedTuple):
    """What one follower senses: leader, own target, two nearest obstacles."""
    to_leader: RangeBearing
    to_target: RangeBearing
    to_obstacle1: RangeBearing
    to_obstacle2: RangeBearing


# --- leader motion modes ----------------------------------------------------

@dataclass(frozen=True)
class StaticMode:
    pass


@dataclass(frozen=True)
class CircleMode:
    center: Vec2
    radius: float


@dataclass(frozen=True)
class SquareMode:
    center: Vec2
    side: float


@dataclass(frozen=True)
class RandomWalkMode:
    redirect_period: float = 1.0


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 0.1
    arena_half_extent: float = 2.5
    robot_radius: float = 0.037
    leader_speed: float = 0.3
    follower_speed: float = 0.36
    leader_mode: object = field(default_factory=StaticMode)
    rng_seed: int = 0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.arena_half_extent <= 0.0 or self.robot_radius <= 0.0:
            raise ValueError("arena_half_extent and robot_radius must be positive")
        if self.follower_speed <= self.leader_speed:
            raise ValueError(
                f"follower_speed ({self.follower_speed}) must exceed "
                f"leader_speed ({self.leader_speed})")
        half = self.arena_half_extent
        mode = self.leader_mode
        if isinstance(mode, CircleMode):
            if mode.radius <= 0.0:
                raise ValueError("circle radius must be positive")
            reach = max(abs(mode.center[0]), abs(mode.center[1])) + mode.radius
            if reach > half:
                raise ValueError("circle path leaves the arena")
        elif isinstance(mode, SquareMode):
            if mode.side <= 0.0:
                raise ValueError("square side must be positive")
            reach = max(abs(mode.center[0]), abs(mode.center[1])) + mode.side / 2.0
            if reach > half:
                raise ValueError("square path leaves the arena")
        elif isinstance(mode, RandomWalkMode):
            if mode.redirect_period <= 0.0:
                raise ValueError("redirect_period must be positive")
        elif not isinstance(mode, StaticMode):
            raise ValueError(f"unknown leader mode {mode!r}")


def make_world(agents, config: WorldConfig) -> WorldState:
    agents = tuple(agents)
    ids = [a.agent_id for a in agents]
    if len(set(ids)) != len(ids):
        raise WorldBuildError(f"duplicate agent ids: {sorted(ids)}")
    n_leaders = sum(1 for a in agents if a.role is Role.LEADER)
    if n_leaders != 1:
        raise WorldBuildError(f"world needs exactly one leader, found {n_leaders}")
    half = config.arena_half_extent
    for a in agents:
        if abs(a.position[0]) > half or abs(a.position[1]) > half:
            raise WorldBuildError(
                f"agent {a.agent_id} spawns outside the arena at {tuple(a.position)}")
    return WorldState(agents=agents, time=0.0, step_count=0)


def get_agent(world: WorldState, agent_id: int) -> AgentState:
    for a in world.agents:
        if a.agent_id == agent_id:
            return a
    raise KeyError(f"no agent with id {agent_id}")


def leader_of(world: WorldState) -> AgentState:
    for a in world.agents:
        if a.role is Role.LEADER:
            return a
    raise WorldBuildError("world has no leader")


def _role_speed(role: Role, config: WorldConfig):
    if role is Role.LEADER:
        return config.leader_speed
    if role is Role.FOLLOWER:
        return config.follower_speed
    return None  # obstacles may move at any commanded speed


def step_world(world: WorldState, commands, config: WorldConfig) -> WorldState:
    """Advance every agent by dt under its velocity command.

    commands maps agent_id -> Vec2. Leaders and followers must be commanded
    (at their configured speed, or zero); obstacles default to staying put.
    Positions clamp per component to the arena square.
    """
    half = config.arena_half_extent
    new_agents = []
    for a in world.agents:
        if a.agent_id in commands:
            cmd = vec2(*commands[a.agent_id])
        elif a.role is Role.OBSTACLE:
            cmd = Vec2(0.0, 0.0)
        else:
            raise CommandError(f"missing command for {a.role.value} {a.agent_id}")
        speed = _role_speed(a.role, config)
        if speed is not None:
            n = norm(cmd)
            if n > 1e-12 and abs(n - speed) > 1e-9:
                raise CommandError(
                    f"{a.role.value} {a.agent_id} commanded at speed {n:.6f}, "
                    f"expected {speed} or 0")
        x = min(max(a.position[0] + cmd[0] * config.dt, -half), half)
        y = min(max(a.position[1] + cmd[1] * config.dt, -half), half)
        new_agents.append(a._replace(position=Vec2(x, y), velocity=cmd))
    step_count = world.step_count + 1
    return WorldState(agents=tuple(new_agents), time=step_count * config.dt,
                      step_count=step_count)


def target_position(leader_position: Vec2, offset: Vec2) -> Vec2:
    """World-frame formation slot for one follower."""
    return add(leader_position, offset)


def nearest_obstacles(world: WorldState, agent_id: int, k: int = 2):
    """Vectors from the agent to its k nearest other agents.

    Every other agent counts as an obstacle regardless of role. Sorted by
    ascending distance, ties broken by lower agent id; short worlds pad with
    a virtual obstacle at D_FAR along bearing zero.
    """
    me = get_agent(world, agent_id)
    ranked = sorted(
        ((distance(me.position, other.position), other.agent_id,
          sub(other.position, me.position))
         for other in world.agents if other.agent_id != agent_id),
        key=lambda item: (item[0], item[1]))
    vectors = [item[2] for item in ranked[:k]]
    while len(vectors) < k:
        vectors.append(Vec2(D_FAR, 0.0))
    return vectors


def _range_bearing_to(origin: Vec2, point: Vec2) -> RangeBearing:
    d = distance(origin, point)
    if d == 0.0:
        return RangeBearing(0.0, 0.0)
    return RangeBearing(d, bearing(origin, point))


def _range_bearing_of_vector(v: Vec2) -> RangeBearing:
    d = norm(v)
    if d == 0.0:
        return RangeBearing(0.0, 0.0)
    return RangeBearing(d, wrap_angle(math.atan2(v[1], v[0])))


def build_observation(world: WorldState, agent_id: int,
                      target_offset: Vec2) -> Observation:
    """Sensor tuple for one follower; a pure function of the world state."""
    me = get_agent(world, agent_id)
    if me.role is not Role.FOLLOWER:
        raise ValueError(f"agent {agent_id} is a {me.role.value}, not a follower")
    leader = leader_of(world)
    target = target_position(leader.position, target_offset)
    obs_vectors = nearest_obstacles(world, agent_id, k=2)
    return Observation(
        to_leader=_range_bearing_to(me.position, leader.position),
        to_target=_range_bearing_to(me.position, target),
        to_obstacle1=_range_bearing_of_vector(obs_vectors[0]),
        to_obstacle2=_range_bearing_of_vector(obs_vectors[1]),
    )


def normalize_observation(obs: Observation, d_max: float) -> np.ndarray:
    """Flatten to 8 floats: distances clipped to [0,1], bearings scaled by pi."""
    if d_max <= 0.0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    out = np.empty(8)
    for i, rb in enumerate(obs):
        out[2 * i] = min(rb.distance, d_max) / d_max
        out[2 * i + 1] = rb.bearing / math.pi
    return out


def detect_collision(world: WorldState, agent_id: int, robot_radius: float) -> bool:
    """True when any other agent sits closer than one robot diameter."""
    me = get_agent(world, agent_id)
    limit = 2.0 * robot_radius
    return any(distance(me.position, other.position) < limit
               for other in world.agents if other.agent_id != agent_id)


# --- leader controller ------------------------------------------------------

class LeaderController:
    """Emits leader velocity commands for one world's leader.

    Circle/Square modes chase a waypoint list with a constant-speed heading
    controller (waypoint advances inside WAYPOINT_TOLERANCE); RandomWalk
    redraws a uniform heading every redirect_period seconds; Static stays put.
    Stateful: keep one controller per world and call it once per step.
    """

    def __init__(self, mode, speed: float):
        self.mode = mode
        self.speed = float(speed)
        self._waypoints = None
        self._wp_index = None
        self._direction = None
        self._next_redraw = 0.0
        if isinstance(mode, CircleMode):
            cx, cy = mode.center
            self._waypoints = [
                Vec2(cx + mode.radius * math.cos(2.0 * math.pi * i / CIRCLE_WAYPOINTS),
                     cy + mode.radius * math.sin(2.0 * math.pi * i / CIRCLE_WAYPOINTS))
                for i in range(CIRCLE_WAYPOINTS)
            ]
        elif isinstance(mode, SquareMode):
            cx, cy = mode.center
            h = mode.side / 2.0
            self._waypoints = [Vec2(cx + h, cy + h), Vec2(cx - h, cy + h),
                               Vec2(cx - h, cy - h), Vec2(cx + h, cy - h)]

    def command(self, position: Vec2, time: float, rng) -> Vec2:
        if isinstance(self.mode, StaticMode):
            return Vec2(0.0, 0.0)
        if isinstance(self.mode, RandomWalkMode):
            if self._direction is None or time >= self._next_redraw - 1e-9:
                theta = rng.uniform(-math.pi, math.pi)
                self._direction = Vec2(math.cos(theta), math.sin(theta))
                self._next_redraw = time + self.mode.redirect_period
            return scale(self._direction, self.speed)

        # waypoint modes
        if self._wp_index is None:
            dists = [distance(position, wp) for wp in self._waypoints]
            self._wp_index = dists.index(min(dists))
        for _ in range(len(self._waypoints)):
            wp = self._waypoints[self._wp_index]
            if distance(position, wp) > WAYPOINT_TOLERANCE:
                break
            self._wp_index = (self._wp_index + 1) % len(self._waypoints)
        wp = self._waypoints[self._wp_index]
        d = distance(position, wp)
        if d == 0.0:
            return Vec2(0.0, 0.0)
        direction = scale(sub(wp, position), 1.0 / d)
        return scale(direction, self.speed)


def leader_command(controller: LeaderController, leader_state: AgentState,
                   time: float, rng) -> Vec2:
    """Velocity for the leader this step; norm is leader speed (0 if static)."""
    return controller.command(leader_state.position, time, rng)
