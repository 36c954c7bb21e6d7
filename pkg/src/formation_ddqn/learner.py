"""Replay memory, epsilon-greedy control, and the double-DQN training loop.

The loop is environment-agnostic: anything with ``reset(rng) -> features``
and ``step(action, rng) -> (features, reward, terminal, info)`` trains, which
is how the tabular chain MDP exercises the full pipeline. The robot
environment lives at the bottom of this module.

Determinism contract: one ``numpy.random.Generator`` seeded from the config
drives every stochastic choice (weight init, spawns, epsilon draws, random
walk redirects, replay sampling) in a fixed order, so a seed pins the whole
run bit-for-bit on a given backend.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import action_direction, scale
from .kernels import ACTIVE_KERNELS, LOSS_HUBER, LOSS_MSE
from .network import Network, forward, forward_batch, init_adam, init_network
from .rewards import RewardConfig, keep_reward, reach_reward, state_only_reward
from . import world as W

_LOSS_KINDS = {"mse": LOSS_MSE, "huber": LOSS_HUBER}

MODEL_KINDS = ("reach", "keep")

SPAWN_SEPARATION_RADII = 4  # min initial separation, in robot radii


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayNotReady(RuntimeError):
    """Sampling requested before the buffer holds a full batch."""


class ReplayBuffer:
    """Fixed-capacity FIFO transition store over preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int = 8):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.state_dim = state_dim
        self.size = 0
        self._cursor = 0  # next slot to write (oldest once full)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)

    def push(self, t: Transition) -> "ReplayBuffer":
        s = np.asarray(t.state, dtype=np.float64)
        s2 = np.asarray(t.next_state, dtype=np.float64)
        if s.shape != (self.state_dim,) or s2.shape != (self.state_dim,):
            raise ValueError(f"states must have shape ({self.state_dim},)")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(s2))
                and math.isfinite(t.reward)):
            raise ValueError("non-finite transition")
        i = self._cursor
        self.states[i] = s
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = s2
        self.terminals[i] = t.terminal
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return self

    def _at(self, slot: int) -> Transition:
        return Transition(self.states[slot].copy(), int(self.actions[slot]),
                          float(self.rewards[slot]), self.next_states[slot].copy(),
                          bool(self.terminals[slot]))

    def snapshot(self) -> list:
        """Live transitions, oldest first."""
        if self.size < self.capacity:
            order = range(self.size)
        else:
            order = [(self._cursor + k) % self.capacity for k in range(self.capacity)]
        return [self._at(i) for i in order]

    def sample_indices(self, batch_size: int, rng) -> np.ndarray:
        """Uniform slots with replacement; the one RNG draw behind sampling."""
        if self.size < batch_size:
            raise ReplayNotReady(
                f"buffer holds {self.size} transitions, batch needs {batch_size}")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng) -> list:
        return [self._at(int(i)) for i in self.sample_indices(batch_size, rng)]

    def sample_arrays(self, batch_size: int, rng):
        """(states, actions, rewards, next_states, terminals) as fresh arrays."""
        idx = self.sample_indices(batch_size, rng)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    decay: float = 0.9975
    floor: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.floor <= self.start <= 1.0:
            raise ValueError("need 0 <= floor <= start <= 1")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")


def epsilon_at(schedule: EpsilonSchedule, episode_index: int) -> float:
    """Exploration rate for an episode: start*decay^i, floored."""
    if episode_index < 0:
        raise ValueError("episode_index must be >= 0")
    return max(schedule.floor, schedule.start * schedule.decay ** episode_index)


def select_action(net: Network, features, epsilon: float, rng) -> int:
    """Epsilon-greedy action; greedy ties resolve to the lowest index.

    Always consumes exactly one uniform draw (plus one integer draw when
    exploring) so the RNG stream does not depend on the q-values.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(0, net.n_outputs))
    return int(np.argmax(forward(net, features)))


def ddqn_targets(batch, online: Network, target: Network, gamma: float) -> np.ndarray:
    """Double-DQN regression targets for a list of transitions.

    Terminal rows are y = r and their next states are never evaluated;
    non-terminal rows bootstrap with the target net's value of the online
    net's argmax action.
    """
    if online.sizes != target.sizes:
        raise ValueError("online and target networks must share an architecture")
    rewards = np.array([t.reward for t in batch])
    terminals = np.array([t.terminal for t in batch], dtype=bool)
    y = rewards.copy()
    live = ~terminals
    if np.any(live):
        next_states = np.stack([t.next_state for t in batch if not t.terminal])
        q_online = forward_batch(online, next_states)
        q_target = forward_batch(target, next_states)
        y[live] = ACTIVE_KERNELS.ddqn_targets(
            rewards[live], np.zeros(int(live.sum()), dtype=bool),
            q_online, q_target, gamma)
    return y


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str
    episodes: int
    rng_seed: int = 0
    batch_size: int = 64
    gamma: float = 0.99
    lr: float = 0.0003
    max_steps_per_episode: int = 300
    replay_capacity: int = 200_000
    replay_min: int = 100_000
    target_sync_period: int = 1000
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    switch_radius: float = 0.1
    d_max: float = 5.0
    loss: str = "mse"
    huber_delta: float = 1.0
    arch: tuple = (8, 64, 64, 8)
    world: W.WorldConfig | None = None  # None: mode-appropriate default
    reward: RewardConfig = field(default_factory=RewardConfig)
    reward_kind: str | None = None  # None: match model_kind; or state_only
    offset_min: float = 0.4  # brackets the packaged scenario offsets (~0.5 m)
    offset_max: float = 0.6
    n_obstacles: int = 2
    stats_path: str | None = None

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.batch_size <= 0 or self.batch_size > self.replay_min:
            raise ValueError("need 0 < batch_size <= replay_min")
        if self.replay_min > self.replay_capacity:
            raise ValueError("replay_min cannot exceed replay_capacity")
        if self.max_steps_per_episode <= 0:
            raise ValueError("max_steps_per_episode must be positive")
        if self.target_sync_period <= 0:
            raise ValueError("target_sync_period must be positive")
        if self.loss not in _LOSS_KINDS:
            raise ValueError(f"loss must be one of {sorted(_LOSS_KINDS)}")
        if self.switch_radius <= 0.0 or self.d_max <= 0.0:
            raise ValueError("switch_radius and d_max must be positive")
        if not 0.0 < self.offset_min <= self.offset_max:
            raise ValueError("need 0 < offset_min <= offset_max")
        if self.n_obstacles < 0:
            raise ValueError("n_obstacles must be >= 0")
        if self.reward_kind not in (None, "reach", "keep", "state_only"):
            raise ValueError(f"unknown reward_kind {self.reward_kind!r}")


class EpisodeStats(NamedTuple):
    episode: int
    ep_return: float
    steps: int
    time_in_radius: int  # steps ending within switch_radius of the target
    collisions: int
    epsilon: float


@dataclass
class TrainStats:
    episodes: list
    gradient_steps: int = 0
    # one array per episode: the follower's post-step distance to its target,
    # kept so time-in-radius can be recounted at any radius afterwards
    target_distances: list = field(default_factory=list)


STATS_HEADER = ("episode", "return", "steps", "time_in_radius",
                "collisions", "epsilon")


def train(env_factory, config: TrainConfig):
    """Double-DQN training; returns (online Network, TrainStats).

    One gradient step per environment step once the replay buffer reaches
    replay_min; the target net hard-syncs every target_sync_period gradient
    steps. Episodes end early on a terminal transition.
    """
    rng = np.random.default_rng(config.rng_seed)
    net = init_network(rng, config.arch)
    target = net.copy()
    adam = init_adam(net)
    buffer = ReplayBuffer(config.replay_capacity, state_dim=config.arch[0])
    env = env_factory(config)
    stats = TrainStats(episodes=[])
    loss_kind = _LOSS_KINDS[config.loss]
    kernel_shape = len(net.weights) == 3
    K = ACTIVE_KERNELS

    if kernel_shape:
        w1, w2, w3 = net.weights
        b1, b2, b3 = net.biases
        tw1, tw2, tw3 = target.weights
        tb1, tb2, tb3 = target.biases
        mw1, mw2, mw3 = adam.m_weights
        mb1, mb2, mb3 = adam.m_biases
        vw1, vw2, vw3 = adam.v_weights
        vb1, vb2, vb3 = adam.v_biases

    writer = fh = None
    if config.stats_path:
        fh = open(config.stats_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(STATS_HEADER)

    try:
        for ep in range(config.episodes):
            eps = epsilon_at(config.epsilon, ep)
            features = env.reset(rng)
            ep_return = 0.0
            steps = 0
            in_radius = 0
            collided = 0
            dists = []
            for _ in range(config.max_steps_per_episode):
                action = select_action(net, features, eps, rng)
                next_features, reward, terminal, info = env.step(action, rng)
                buffer.push(Transition(features, action, reward,
                                       next_features, terminal))
                ep_return += reward
                steps += 1
                if info.get("collision"):
                    collided += 1
                dist = info.get("target_distance")
                if dist is not None:
                    dists.append(dist)
                    if dist <= config.switch_radius:
                        in_radius += 1

                if buffer.size >= config.replay_min:
                    bs, ba, br, bs2, bt = buffer.sample_arrays(
                        config.batch_size, rng)
                    stats.gradient_steps += 1
                    if kernel_shape:
                        K.train_step(
                            w1, b1, w2, b2, w3, b3,
                            tw1, tb1, tw2, tb2, tw3, tb3,
                            mw1, mb1, mw2, mb2, mw3, mb3,
                            vw1, vb1, vw2, vb2, vw3, vb3,
                            bs, ba, br, bs2, bt,
                            config.gamma, config.lr,
                            adam.beta1, adam.beta2, adam.eps,
                            stats.gradient_steps, loss_kind, config.huber_delta)
                        adam.step = stats.gradient_steps
                    else:
                        _generic_train_step(net, target, adam, bs, ba, br,
                                            bs2, bt, config)
                    if stats.gradient_steps % config.target_sync_period == 0:
                        for tw, w in zip(target.weights, net.weights):
                            tw[...] = w
                        for tb, b in zip(target.biases, net.biases):
                            tb[...] = b

                features = next_features
                if terminal:
                    break
            row = EpisodeStats(ep, ep_return, steps, in_radius, collided, eps)
            stats.episodes.append(row)
            stats.target_distances.append(np.asarray(dists))
            if writer is not None:
                writer.writerow(row)
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return net, stats


def _generic_train_step(net, target, adam, bs, ba, br, bs2, bt, config):
    """Unfused fallback for architectures outside the kernel shape."""
    from .network import adam_step, loss_and_gradients

    q_online = forward_batch(net, bs2)
    q_target = forward_batch(target, bs2)
    y = ACTIVE_KERNELS.ddqn_targets(br, bt, q_online, q_target, config.gamma)
    _, grads = loss_and_gradients(net, bs, ba, y, loss=config.loss,
                                  huber_delta=config.huber_delta)
    adam_step(net, adam, grads, lr=config.lr)


# ---------------------------------------------------------------------------
# the robot training environment
# ---------------------------------------------------------------------------

LEADER_ID = 0
FOLLOWER_ID = 1

_MAX_SPAWN_TRIES = 1000


def default_world_config(model_kind: str) -> W.WorldConfig:
    """Mode-appropriate training world: random-walk leader for the reaching
    model, a circling leader for the keeping model."""
    if model_kind == "reach":
        mode = W.RandomWalkMode()
    else:
        mode = W.CircleMode(center=W.Vec2(0.0, 0.0), radius=0.8)
    return W.WorldConfig(leader_mode=mode)


class RobotTrainingEnv:
    """Leader + one learning follower + static obstacle robots.

    Per episode the formation offset is redrawn (polar-uniform between
    offset_min and offset_max), the obstacles respawn uniformly in the arena
    with a minimum separation, and the follower spawns uniformly (reach) or
    exactly on its target (keep). A collision ends the episode as terminal.
    """

    def __init__(self, config: TrainConfig):
        self.cfg = config
        self.world_cfg = config.world if config.world is not None \
            else default_world_config(config.model_kind)
        kind = config.reward_kind or config.model_kind
        if kind == "reach":
            self._reward = self._reach_reward
        elif kind == "keep":
            self._reward = self._keep_reward
        else:
            self._reward = self._state_only_reward
        self.world = None
        self.controller = None
        self.offset = None
        self.obs = None

    # reward arms -----------------------------------------------------------
    def _reach_reward(self, obs, action):
        return reach_reward([obs.to_obstacle1, obs.to_obstacle2],
                            obs.to_target, action, self.cfg.reward).total

    def _keep_reward(self, obs, action):
        return keep_reward(obs.to_target, action, self.cfg.reward)

    def _state_only_reward(self, obs, action):
        return state_only_reward(obs.to_target)

    # spawning ----------------------------------------------------------------
    def _leader_spawn(self, rng):
        mode = self.world_cfg.leader_mode
        half = self.world_cfg.arena_half_extent
        if isinstance(mode, W.CircleMode):
            return W.Vec2(mode.center[0] + mode.radius, mode.center[1])
        if isinstance(mode, W.SquareMode):
            h = mode.side / 2.0
            return W.Vec2(mode.center[0] + h, mode.center[1] + h)
        if isinstance(mode, W.RandomWalkMode):
            return W.Vec2(rng.uniform(-half, half), rng.uniform(-half, half))
        return W.Vec2(0.0, 0.0)

    def _spawn_clear_of(self, placed, rng):
        half = self.world_cfg.arena_half_extent
        min_sep = SPAWN_SEPARATION_RADII * self.world_cfg.robot_radius
        for _ in range(_MAX_SPAWN_TRIES):
            p = W.Vec2(rng.uniform(-half, half), rng.uniform(-half, half))
            if all(W.distance(p, q) >= min_sep for q in placed):
                return p
        raise RuntimeError("could not place an agent clear of the others")

    def reset(self, rng) -> np.ndarray:
        cfg = self.cfg
        half = self.world_cfg.arena_half_extent
        leader_pos = self._leader_spawn(rng)
        r = rng.uniform(cfg.offset_min, cfg.offset_max)
        phi = rng.uniform(-math.pi, math.pi)
        self.offset = W.Vec2(r * math.cos(phi), r * math.sin(phi))

        placed = [leader_pos]
        if cfg.model_kind == "keep":
            tx, ty = W.target_position(leader_pos, self.offset)
            follower_pos = W.Vec2(min(max(tx, -half), half),
                                  min(max(ty, -half), half))
        else:
            follower_pos = self._spawn_clear_of(placed, rng)
        placed.append(follower_pos)

        agents = [
            W.AgentState(LEADER_ID, W.Role.LEADER, leader_pos),
            W.AgentState(FOLLOWER_ID, W.Role.FOLLOWER, follower_pos),
        ]
        for k in range(cfg.n_obstacles):
            p = self._spawn_clear_of(placed, rng)
            placed.append(p)
            agents.append(W.AgentState(FOLLOWER_ID + 1 + k, W.Role.OBSTACLE, p))

        self.world = W.make_world(agents, self.world_cfg)
        self.controller = W.LeaderController(self.world_cfg.leader_mode,
                                             self.world_cfg.leader_speed)
        self.obs = W.build_observation(self.world, FOLLOWER_ID, self.offset)
        return W.normalize_observation(self.obs, cfg.d_max)

    def step(self, action: int, rng):
        reward = self._reward(self.obs, action)
        leader = W.get_agent(self.world, LEADER_ID)
        commands = {
            LEADER_ID: self.controller.command(leader.position,
                                               self.world.time, rng),
            FOLLOWER_ID: scale(action_direction(action),
                               self.world_cfg.follower_speed),
        }
        self.world = W.step_world(self.world, commands, self.world_cfg)
        collided = W.detect_collision(self.world, FOLLOWER_ID,
                                      self.world_cfg.robot_radius)
        self.obs = W.build_observation(self.world, FOLLOWER_ID, self.offset)
        features = W.normalize_observation(self.obs, self.cfg.d_max)
        info = {"collision": collided,
                "target_distance": self.obs.to_target.distance}
        return features, reward, collided, info
