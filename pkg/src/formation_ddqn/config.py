"""Fail-closed JSON configuration parsing.

Every section rejects keys it does not know, so a typo like "epsilom" is an
error instead of a silently ignored setting. Parsers return the frozen
config dataclasses used across the package; validation messages carry the
JSON path of the offending entry.
"""

from __future__ import annotations

import json

from .geometry import Vec2
from .learner import EpsilonSchedule, TrainConfig
from .rewards import RewardConfig
from .world import (CircleMode, RandomWalkMode, SquareMode, StaticMode,
                    WorldConfig)


class ConfigError(ValueError):
    """Configuration file is malformed or violates a constraint."""


TOP_LEVEL_KEYS = frozenset({"train", "compare", "scenarios"})


def check_keys(doc: dict, allowed, where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(
            f"{where}: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")


def take_number(doc: dict, key: str, where: str, default):
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def take_int(doc: dict, key: str, where: str, default):
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    return v


def take_str(doc: dict, key: str, where: str, default):
    v = doc.get(key, default)
    if v is not None and not isinstance(v, str):
        raise ConfigError(f"{where}.{key}: expected a string, got {v!r}")
    return v


def take_vec2(value, where: str) -> Vec2:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or any(isinstance(c, bool) or not isinstance(c, (int, float))
                   for c in value)):
        raise ConfigError(f"{where}: expected [x, y], got {value!r}")
    return Vec2(float(value[0]), float(value[1]))


_MODE_KEYS = {
    "static": {"kind"},
    "circle": {"kind", "center", "radius"},
    "square": {"kind", "center", "side"},
    "random_walk": {"kind", "redirect_period"},
}


def parse_leader_mode(doc: dict, where: str = "leader_mode"):
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError(f"{where}: expected an object with a 'kind' key")
    kind = doc["kind"]
    if kind not in _MODE_KEYS:
        raise ConfigError(
            f"{where}.kind: unknown mode {kind!r}; expected one of "
            f"{sorted(_MODE_KEYS)}")
    check_keys(doc, _MODE_KEYS[kind], where)
    if kind == "static":
        return StaticMode()
    if kind == "circle":
        return CircleMode(center=take_vec2(doc.get("center", [0.0, 0.0]),
                                           f"{where}.center"),
                          radius=take_number(doc, "radius", where, 0.8))
    if kind == "square":
        return SquareMode(center=take_vec2(doc.get("center", [0.0, 0.0]),
                                           f"{where}.center"),
                          side=take_number(doc, "side", where, 1.2))
    return RandomWalkMode(
        redirect_period=take_number(doc, "redirect_period", where, 1.0))


_WORLD_KEYS = {"dt", "arena_half_extent", "robot_radius", "leader_speed",
               "follower_speed", "leader_mode", "rng_seed"}


def parse_world(doc: dict, where: str = "world",
                default: WorldConfig | None = None) -> WorldConfig:
    base = default if default is not None else WorldConfig()
    check_keys(doc, _WORLD_KEYS, where)
    mode = base.leader_mode
    if "leader_mode" in doc:
        mode = parse_leader_mode(doc["leader_mode"], f"{where}.leader_mode")
    try:
        return WorldConfig(
            dt=take_number(doc, "dt", where, base.dt),
            arena_half_extent=take_number(doc, "arena_half_extent", where,
                                          base.arena_half_extent),
            robot_radius=take_number(doc, "robot_radius", where,
                                     base.robot_radius),
            leader_speed=take_number(doc, "leader_speed", where,
                                     base.leader_speed),
            follower_speed=take_number(doc, "follower_speed", where,
                                       base.follower_speed),
            leader_mode=mode,
            rng_seed=take_int(doc, "rng_seed", where, base.rng_seed),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


_REWARD_KEYS = {"n_actions", "n_negative_actions", "obstacle_epsilon"}


def parse_reward(doc: dict, where: str = "reward") -> RewardConfig:
    check_keys(doc, _REWARD_KEYS, where)
    base = RewardConfig()
    try:
        return RewardConfig(
            n_actions=take_int(doc, "n_actions", where, base.n_actions),
            n_negative_actions=take_int(doc, "n_negative_actions", where,
                                        base.n_negative_actions),
            obstacle_epsilon=take_number(doc, "obstacle_epsilon", where,
                                         base.obstacle_epsilon),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


_EPSILON_KEYS = {"start", "decay", "floor"}


def parse_epsilon(doc: dict, where: str = "epsilon") -> EpsilonSchedule:
    check_keys(doc, _EPSILON_KEYS, where)
    base = EpsilonSchedule()
    try:
        return EpsilonSchedule(
            start=take_number(doc, "start", where, base.start),
            decay=take_number(doc, "decay", where, base.decay),
            floor=take_number(doc, "floor", where, base.floor),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


_TRAIN_KEYS = {"model_kind", "episodes", "rng_seed", "batch_size", "gamma",
               "lr", "max_steps_per_episode", "replay_capacity", "replay_min",
               "target_sync_period", "epsilon", "switch_radius", "d_max",
               "loss", "huber_delta", "arch", "world", "reward",
               "reward_kind", "offset_min", "offset_max", "n_obstacles",
               "stats_path"}


def parse_train(doc: dict, where: str = "train", *, model_kind=None,
                episodes=None, rng_seed=None, stats_path=None) -> TrainConfig:
    """Build a TrainConfig from a JSON object; keyword overrides win.

    model_kind and episodes must come from the file or the overrides.
    """
    check_keys(doc, _TRAIN_KEYS, where)
    kind = model_kind if model_kind is not None \
        else take_str(doc, "model_kind", where, None)
    if kind is None:
        raise ConfigError(f"{where}.model_kind: required (or pass --model)")
    if episodes is not None:
        eps = episodes
    elif "episodes" in doc:
        eps = take_int(doc, "episodes", where, None)
    else:
        raise ConfigError(f"{where}.episodes: required (or pass --episodes)")
    seed = rng_seed if rng_seed is not None \
        else take_int(doc, "rng_seed", where, 0)
    out_stats = stats_path if stats_path is not None \
        else take_str(doc, "stats_path", where, None)

    arch = doc.get("arch", [8, 64, 64, 8])
    if (not isinstance(arch, list) or len(arch) < 2
            or any(isinstance(a, bool) or not isinstance(a, int) for a in arch)):
        raise ConfigError(f"{where}.arch: expected a list of layer sizes")

    world = None
    if "world" in doc:
        world = parse_world(doc["world"], f"{where}.world")
    reward = parse_reward(doc.get("reward", {}), f"{where}.reward")
    schedule = parse_epsilon(doc.get("epsilon", {}), f"{where}.epsilon")

    defaults = TrainConfig.__dataclass_fields__
    try:
        return TrainConfig(
            model_kind=kind,
            episodes=eps,
            rng_seed=seed,
            batch_size=take_int(doc, "batch_size", where,
                                defaults["batch_size"].default),
            gamma=take_number(doc, "gamma", where, defaults["gamma"].default),
            lr=take_number(doc, "lr", where, defaults["lr"].default),
            max_steps_per_episode=take_int(
                doc, "max_steps_per_episode", where,
                defaults["max_steps_per_episode"].default),
            replay_capacity=take_int(doc, "replay_capacity", where,
                                     defaults["replay_capacity"].default),
            replay_min=take_int(doc, "replay_min", where,
                                defaults["replay_min"].default),
            target_sync_period=take_int(doc, "target_sync_period", where,
                                        defaults["target_sync_period"].default),
            epsilon=schedule,
            switch_radius=take_number(doc, "switch_radius", where,
                                      defaults["switch_radius"].default),
            d_max=take_number(doc, "d_max", where, defaults["d_max"].default),
            loss=take_str(doc, "loss", where, defaults["loss"].default),
            huber_delta=take_number(doc, "huber_delta", where,
                                    defaults["huber_delta"].default),
            arch=tuple(arch),
            world=world,
            reward=reward,
            reward_kind=take_str(doc, "reward_kind", where, None),
            offset_min=take_number(doc, "offset_min", where,
                                   defaults["offset_min"].default),
            offset_max=take_number(doc, "offset_max", where,
                                   defaults["offset_max"].default),
            n_obstacles=take_int(doc, "n_obstacles", where,
                                 defaults["n_obstacles"].default),
            stats_path=out_stats,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str) -> dict:
    """Read and top-level-validate a config file; sections parse on demand."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    check_keys(doc, TOP_LEVEL_KEYS, path)
    return doc
