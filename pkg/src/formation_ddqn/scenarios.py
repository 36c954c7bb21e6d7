"""Named evaluation scenarios, loaded from packaged JSON definitions.

The geometry (paths, offsets, start positions) lives in data files under
``formation_ddqn/scenarios/``; this module only parses and validates them.
User config files may override or add scenarios through their "scenarios"
section, which uses the same schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .config import (ConfigError, check_keys, parse_world, take_int,
                     take_number, take_vec2)
from .geometry import Vec2
from .world import WorldConfig

SCENARIO_NAMES = ("circle", "square", "setup1", "setup2", "setup3", "setup4",
                  "fig4-compare")


@dataclass(frozen=True)
class ComparisonSpec:
    """Desk-scale settings for the two-arm reward-design comparison."""

    episodes: int = 1400
    replay_capacity: int = 20_000
    replay_min: int = 2_000
    seeds: tuple = (0, 1, 2)
    radius: float = 0.15
    window: int = 10

    def __post_init__(self):
        if self.episodes <= 0 or self.window <= 0:
            raise ValueError("episodes and window must be positive")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not 0 < self.replay_min <= self.replay_capacity:
            raise ValueError("need 0 < replay_min <= replay_capacity")


@dataclass(frozen=True)
class Scenario:
    """A fully specified evaluation world plus rollout parameters.

    follower_starts None means each follower begins exactly on its target;
    leader_start None puts the leader at its mode's natural start (first
    waypoint for circle/square, origin otherwise).
    """

    name: str
    world: WorldConfig
    offsets: tuple            # one Vec2 per follower
    follower_starts: tuple | None
    obstacles: tuple = ()
    leader_start: Vec2 | None = None
    steps: int = 1200
    seeds: tuple = (0, 1, 2)
    switch_radius: float = 0.1
    release_radius: float = 0.25
    comparison: ComparisonSpec | None = None

    def __post_init__(self):
        if not self.offsets:
            raise ValueError("scenario needs at least one follower offset")
        if (self.follower_starts is not None
                and len(self.follower_starts) != len(self.offsets)):
            raise ValueError("follower_starts and offsets disagree in length")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if not self.seeds:
            raise ValueError("need at least one seed")


_SCENARIO_KEYS = {"name", "world", "offsets", "follower_starts", "obstacles",
                  "leader_start", "steps", "seeds", "switch_radius",
                  "release_radius", "comparison"}
_COMPARISON_KEYS = {"episodes", "replay_capacity", "replay_min", "seeds",
                    "radius", "window"}


def _take_vec2_list(value, where: str) -> tuple:
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list of [x, y] pairs")
    return tuple(take_vec2(v, f"{where}[{i}]") for i, v in enumerate(value))


def _take_seeds(doc: dict, where: str, default=(0, 1, 2)) -> tuple:
    if "seeds" not in doc:
        return tuple(default)
    seeds = doc["seeds"]
    if (not isinstance(seeds, list) or not seeds
            or any(isinstance(s, bool) or not isinstance(s, int) for s in seeds)):
        raise ConfigError(f"{where}.seeds: expected a non-empty integer list")
    return tuple(seeds)


def parse_comparison(doc: dict, where: str = "comparison") -> ComparisonSpec:
    check_keys(doc, _COMPARISON_KEYS, where)
    base = ComparisonSpec()
    try:
        return ComparisonSpec(
            episodes=take_int(doc, "episodes", where, base.episodes),
            replay_capacity=take_int(doc, "replay_capacity", where,
                                     base.replay_capacity),
            replay_min=take_int(doc, "replay_min", where, base.replay_min),
            seeds=_take_seeds(doc, where, base.seeds),
            radius=take_number(doc, "radius", where, base.radius),
            window=take_int(doc, "window", where, base.window),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def parse_scenario(doc: dict, where: str = "scenario") -> Scenario:
    check_keys(doc, _SCENARIO_KEYS, where)
    if "name" not in doc or not isinstance(doc["name"], str):
        raise ConfigError(f"{where}.name: required string")
    if "offsets" not in doc:
        raise ConfigError(f"{where}.offsets: required")
    world = parse_world(doc.get("world", {}), f"{where}.world")
    starts = doc.get("follower_starts")
    comparison = None
    if doc.get("comparison") is not None:
        comparison = parse_comparison(doc["comparison"], f"{where}.comparison")
    try:
        return Scenario(
            name=doc["name"],
            world=world,
            offsets=_take_vec2_list(doc["offsets"], f"{where}.offsets"),
            follower_starts=(None if starts is None else
                             _take_vec2_list(starts, f"{where}.follower_starts")),
            obstacles=_take_vec2_list(doc.get("obstacles", []),
                                      f"{where}.obstacles"),
            leader_start=(None if doc.get("leader_start") is None else
                          take_vec2(doc["leader_start"], f"{where}.leader_start")),
            steps=take_int(doc, "steps", where, 1200),
            seeds=_take_seeds(doc, where),
            switch_radius=take_number(doc, "switch_radius", where, 0.1),
            release_radius=take_number(doc, "release_radius", where, 0.25),
            comparison=comparison,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def _load_packaged(name: str) -> Scenario:
    ref = resources.files("formation_ddqn") / "scenarios" / f"{name}.json"
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise KeyError(f"unknown scenario {name!r}; "
                       f"known: {', '.join(SCENARIO_NAMES)}") from None
    doc = json.loads(text)
    scenario = parse_scenario(doc, where=f"scenarios/{name}.json")
    if scenario.name != name:
        raise ConfigError(f"scenarios/{name}.json: name field says "
                          f"{scenario.name!r}")
    return scenario


def get_scenario(name: str, extra_definitions: dict | None = None) -> Scenario:
    """Look up a scenario by name.

    extra_definitions (a config file's "scenarios" section, mapping name ->
    scenario object) takes precedence over the packaged definitions and may
    introduce new names.
    """
    if extra_definitions is not None:
        check_keys(extra_definitions,
                   set(extra_definitions), "scenarios")  # shape check only
        if name in extra_definitions:
            doc = dict(extra_definitions[name])
            doc.setdefault("name", name)
            return parse_scenario(doc, where=f"scenarios.{name}")
    if name not in SCENARIO_NAMES:
        raise KeyError(f"unknown scenario {name!r}; "
                       f"known: {', '.join(SCENARIO_NAMES)}")
    return _load_packaged(name)
