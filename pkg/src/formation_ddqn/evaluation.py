"""Scenario rollouts, trace CSV export, and evaluation metrics.

A Trace holds one record per agent per step, step 0 being the initial state
(no action/reward yet). For follower rows, ``action``/``reward``/``mode``
describe the transition that produced the row's state (the action was chosen
in the previous state under the recorded mode), while ``dist_err`` is the
distance from the row's position to the follower's formation target. Rewards
are computed with the active model's own reward (reaching: target term minus
the strongest obstacle term; keeping: target term only).

CSV floats are written with 17 significant digits, which round-trips float64
exactly and keeps files byte-stable across runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .geometry import Vec2, distance
from .learner import RobotTrainingEnv, TrainConfig, TrainStats, train
from .network import ArchitectureError, load_weights
from .policy import DualPolicy, Mode, follower_velocity, policy_action
from .rewards import RewardConfig, keep_reward, reach_reward
from .scenarios import ComparisonSpec, Scenario
from .world import (AgentState, CircleMode, LeaderController, Role,
                    SquareMode, build_observation, make_world, step_world,
                    target_position)

TRACE_HEADER = ("step", "time", "agent_id", "role", "x", "y", "action",
                "reward", "mode", "dist_err")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class TraceRecord(NamedTuple):
    step: int
    time: float
    agent_id: int
    role: str
    x: float
    y: float
    action: int | None
    reward: float | None
    mode: str | None
    dist_err: float | None


@dataclass
class Trace:
    records: list

    @property
    def n_steps(self) -> int:
        return max((r.step for r in self.records), default=-1)

    def agent_ids(self):
        seen = []
        for r in self.records:
            if r.agent_id not in seen:
                seen.append(r.agent_id)
        return seen


@dataclass
class Metrics:
    """Summary numbers for a rollout (or a training comparison).

    mean_error/max_error/returns are keyed by follower id for rollout
    metrics; the comparison fills windows (seed -> per-window in-radius
    counts) and returns (seed -> per-episode returns) instead.
    """

    mean_error: dict
    max_error: dict
    collision_count: int
    windows: dict | None = None
    returns: dict | None = None


def _natural_leader_start(world_cfg) -> Vec2:
    mode = world_cfg.leader_mode
    if isinstance(mode, CircleMode):
        return Vec2(mode.center[0] + mode.radius, mode.center[1])
    if isinstance(mode, SquareMode):
        h = mode.side / 2.0
        return Vec2(mode.center[0] + h, mode.center[1] + h)
    return Vec2(0.0, 0.0)


def run_scenario(scenario: Scenario, reach_weights: str, keep_weights: str,
                 seed: int) -> Trace:
    """Roll the dual-model policy through a named scenario.

    Weight arguments are file paths; both files must agree on architecture
    and input normalization. Every follower decides from the same pre-step
    world (no turn order), then all commands apply simultaneously.
    """
    reach_net, reach_info = load_weights(reach_weights)
    keep_net, keep_info = load_weights(keep_weights)
    if reach_net.sizes != keep_net.sizes:
        raise ArchitectureError(
            f"weight files disagree on architecture: {list(reach_net.sizes)} "
            f"vs {list(keep_net.sizes)}")
    if reach_info["d_max"] != keep_info["d_max"]:
        raise ArchitectureError(
            f"weight files disagree on input_norm.d_max: {reach_info['d_max']} "
            f"vs {keep_info['d_max']}")
    d_max = reach_info["d_max"]

    cfg = scenario.world
    leader_start = scenario.leader_start if scenario.leader_start is not None \
        else _natural_leader_start(cfg)
    n_followers = len(scenario.offsets)
    if scenario.follower_starts is not None:
        starts = scenario.follower_starts
    else:
        starts = tuple(target_position(leader_start, off)
                       for off in scenario.offsets)

    agents = [AgentState(0, Role.LEADER, Vec2(*leader_start))]
    follower_ids = []
    for i, pos in enumerate(starts):
        fid = 1 + i
        follower_ids.append(fid)
        agents.append(AgentState(fid, Role.FOLLOWER, Vec2(*pos)))
    for k, pos in enumerate(scenario.obstacles):
        agents.append(AgentState(1 + n_followers + k, Role.OBSTACLE,
                                 Vec2(*pos)))

    world = make_world(agents, cfg)
    controller = LeaderController(cfg.leader_mode, cfg.leader_speed)
    rng = np.random.default_rng(seed)
    reward_cfg = RewardConfig()
    offsets = {fid: off for fid, off in zip(follower_ids, scenario.offsets)}
    policies = {fid: DualPolicy(reach_net, keep_net,
                                switch_radius=scenario.switch_radius,
                                release_radius=scenario.release_radius)
                for fid in follower_ids}

    records = []

    def record_state(step: int, transition: dict) -> None:
        leader_pos = next(a.position for a in world.agents
                          if a.role is Role.LEADER)
        for a in world.agents:
            if a.role is Role.FOLLOWER:
                err = distance(a.position,
                               target_position(leader_pos, offsets[a.agent_id]))
                action, reward, mode = transition.get(
                    a.agent_id, (None, None, policies[a.agent_id].mode.value))
                records.append(TraceRecord(step, world.time, a.agent_id,
                                           a.role.value, a.position[0],
                                           a.position[1], action, reward,
                                           mode, err))
            else:
                records.append(TraceRecord(step, world.time, a.agent_id,
                                           a.role.value, a.position[0],
                                           a.position[1], None, None, None,
                                           None))

    record_state(0, {})
    for _ in range(scenario.steps):
        transition = {}
        commands = {}
        for fid in follower_ids:
            obs = build_observation(world, fid, offsets[fid])
            action, policies[fid] = policy_action(policies[fid], obs, d_max)
            if policies[fid].mode is Mode.REACHING:
                reward = reach_reward([obs.to_obstacle1, obs.to_obstacle2],
                                      obs.to_target, action, reward_cfg).total
            else:
                reward = keep_reward(obs.to_target, action, reward_cfg)
            transition[fid] = (action, reward, policies[fid].mode.value)
            commands[fid] = follower_velocity(action, cfg.follower_speed)
        leader = next(a for a in world.agents if a.role is Role.LEADER)
        commands[leader.agent_id] = controller.command(leader.position,
                                                       world.time, rng)
        world = step_world(world, commands, cfg)
        record_state(world.step_count, transition)
    return Trace(records)


def distance_error(trace: Trace, follower_id: int) -> np.ndarray:
    """Per-step formation error series for one follower, step 0 included."""
    rows = [r for r in trace.records if r.agent_id == follower_id]
    if not rows:
        raise ValueError(f"no agent {follower_id} in trace")
    if any(r.role != Role.FOLLOWER.value or r.dist_err is None for r in rows):
        raise ValueError(f"agent {follower_id} is not a follower")
    rows.sort(key=lambda r: r.step)
    return np.array([r.dist_err for r in rows])


def time_in_radius(stats, radius: float, window: int = 10) -> np.ndarray:
    """Steps spent within ``radius`` of the target, totalled per episode window.

    ``stats`` is a TrainStats (its per-episode distance series) or a bare
    list of per-episode distance arrays. The last window may be partial.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if window <= 0:
        raise ValueError("window must be positive")
    series = stats.target_distances if isinstance(stats, TrainStats) else stats
    counts = [int(np.count_nonzero(np.asarray(d) <= radius)) for d in series]
    return np.array([sum(counts[i:i + window])
                     for i in range(0, len(counts), window)], dtype=np.int64)


def compute_metrics(trace: Trace, robot_radius: float = 0.037) -> Metrics:
    """Mean/max formation error and collision count recomputed from a trace."""
    by_step = {}
    for r in trace.records:
        by_step.setdefault(r.step, []).append(r)
    follower_ids = sorted({r.agent_id for r in trace.records
                           if r.role == Role.FOLLOWER.value})
    errors = {fid: distance_error(trace, fid) for fid in follower_ids}
    returns = {fid: float(sum(r.reward for r in trace.records
                              if r.agent_id == fid and r.reward is not None))
               for fid in follower_ids}
    limit = 2.0 * robot_radius
    collisions = 0
    for step_rows in by_step.values():
        for r in step_rows:
            if r.role != Role.FOLLOWER.value:
                continue
            for other in step_rows:
                if other.agent_id == r.agent_id:
                    continue
                if math.hypot(other.x - r.x, other.y - r.y) < limit:
                    collisions += 1
                    break
    return Metrics(
        mean_error={fid: float(np.mean(errors[fid])) for fid in follower_ids},
        max_error={fid: float(np.max(errors[fid])) for fid in follower_ids},
        collision_count=collisions,
        returns=returns,
    )


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def export_trace(trace: Trace, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.records:
            w.writerow((
                r.step, _fmt(r.time), r.agent_id, r.role,
                _fmt(r.x), _fmt(r.y),
                "" if r.action is None else r.action,
                "" if r.reward is None else _fmt(r.reward),
                "" if r.mode is None else r.mode,
                "" if r.dist_err is None else _fmt(r.dist_err),
            ))


def import_trace(path: str) -> Trace:
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header!r}")
        for row in reader:
            if len(row) != len(TRACE_HEADER):
                raise ValueError(f"{path}: malformed row {row!r}")
            step, time, agent_id, role, x, y, action, reward, mode, derr = row
            records.append(TraceRecord(
                int(step), float(time), int(agent_id), role,
                float(x), float(y),
                None if action == "" else int(action),
                None if reward == "" else float(reward),
                None if mode == "" else mode,
                None if derr == "" else float(derr),
            ))
    return Trace(records)


def export_metrics(metrics: Metrics, path: str) -> None:
    """Flat metric,key,value CSV; window series become one row per window."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "key", "value"))
        for fid in sorted(metrics.mean_error):
            w.writerow(("mean_error", fid, _fmt(metrics.mean_error[fid])))
        for fid in sorted(metrics.max_error):
            w.writerow(("max_error", fid, _fmt(metrics.max_error[fid])))
        w.writerow(("collision_count", "", metrics.collision_count))
        if metrics.returns:
            for key in sorted(metrics.returns):
                value = metrics.returns[key]
                total = float(np.sum(value)) if np.ndim(value) else float(value)
                w.writerow(("return", key, _fmt(total)))
        if metrics.windows:
            for key in sorted(metrics.windows):
                for i, count in enumerate(metrics.windows[key]):
                    w.writerow(("time_in_radius", f"{key}:{i}", int(count)))


# ---------------------------------------------------------------------------
# reward-design comparison
# ---------------------------------------------------------------------------

def compare_rewards(base: TrainConfig | None = None,
                    spec: ComparisonSpec | None = None):
    """Train the keeping task twice per seed, once with the state-action
    reward and once with the action-blind distance reward, and return
    (state_action Metrics, state_only Metrics) with per-seed window series.
    """
    if spec is None:
        spec = ComparisonSpec()
    if base is None:
        base = TrainConfig(model_kind="keep", episodes=spec.episodes)
    results = {}
    for arm, reward_kind in (("state_action", "keep"),
                             ("state_only", "state_only")):
        windows = {}
        returns = {}
        collisions = 0
        for seed in spec.seeds:
            cfg = replace(base, model_kind="keep", reward_kind=reward_kind,
                          episodes=spec.episodes,
                          replay_capacity=spec.replay_capacity,
                          replay_min=spec.replay_min,
                          rng_seed=seed, stats_path=None)
            _, stats = train(RobotTrainingEnv, cfg)
            windows[seed] = time_in_radius(stats, spec.radius, spec.window)
            returns[seed] = [row.ep_return for row in stats.episodes]
            collisions += sum(row.collisions for row in stats.episodes)
        results[arm] = Metrics(mean_error={}, max_error={},
                               collision_count=collisions,
                               windows=windows, returns=returns)
    return results["state_action"], results["state_only"]
