"""Procedural scene suites.

``train``: straight roads and 90 degree turns.
``abnormal``: turns of 30, 45, 60, 120 or 135 degrees on tighter arcs.
``roundabout``: a counter-clockwise ring around an island obstacle with
tangential entry and exit arms, leaving after 90, 180 or 270 degrees.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ._math import rotation_matrix, wrap_angle
from .config import WorldConfig
from .errors import ContractError
from .types import EgoState, Obstacle, RoadMap, Scene, SceneKind, SceneTag

logger = logging.getLogger(__name__)

SUITES = ("train", "abnormal", "roundabout")
ABNORMAL_ANGLES = (30.0, 45.0, 60.0, 120.0, 135.0)
ROUNDABOUT_EXITS = (90.0, 180.0, 270.0)
GOAL_MARGIN = 25.0  # road continues this far past the goal
SPACING = 0.5


class _Path:
    """Centerline builder from straight and arc pieces."""

    def __init__(self, heading: float = 0.0):
        self.points = [np.zeros(2)]
        self.heading = heading

    def straight(self, length: float) -> _Path:
        n = max(1, math.ceil(length / SPACING))
        direction = np.array([math.cos(self.heading), math.sin(self.heading)])
        start = self.points[-1]
        self.points.extend(start + direction * length * i / n for i in range(1, n + 1))
        return self

    def arc(self, radius: float, angle: float) -> _Path:
        """Turn by angle radians (positive = left) on a circle of radius."""
        n = max(1, math.ceil(abs(angle) * radius / SPACING))
        sign = 1.0 if angle >= 0 else -1.0
        start = self.points[-1]
        normal = np.array([-math.sin(self.heading), math.cos(self.heading)]) * sign
        center = start + radius * normal
        for i in range(1, n + 1):
            heading = self.heading + angle * i / n
            offset = -sign * radius * np.array([-math.sin(heading), math.cos(heading)])
            self.points.append(center + offset)
        self.heading += angle
        return self

    def array(self) -> np.ndarray:
        return np.array(self.points)


def _place(points: np.ndarray, rotation: float, shift: np.ndarray) -> np.ndarray:
    return points @ rotation_matrix(rotation).T + shift


def _make_scene(
    scene_id: str,
    centerline: np.ndarray,
    half_width: float,
    tag: SceneTag,
    rng: np.random.Generator,
    config: WorldConfig,
    island: tuple[np.ndarray, float] | None = None,
) -> Scene:
    rotation = float(rng.uniform(-math.pi, math.pi))
    shift = rng.uniform(-50.0, 50.0, size=2)
    world_line = _place(centerline, rotation, shift)
    obstacles = []
    if island is not None:
        center = _place(island[0][None], rotation, shift)[0]
        obstacles.append(Obstacle(float(center[0]), float(center[1]), island[1]))
    road_map = RoadMap(world_line, half_width, obstacles, tag)

    direction = world_line[1] - world_line[0]
    heading = math.atan2(direction[1], direction[0])
    lateral = float(rng.uniform(-1.0, 1.0))
    normal = np.array([-math.sin(heading), math.cos(heading)])
    start_xy = world_line[0] + lateral * normal
    start = EgoState(
        x=float(start_xy[0]),
        y=float(start_xy[1]),
        heading=wrap_angle(heading + float(rng.uniform(-0.1, 0.1))),
        speed=config.cruise_speed,
    )
    goal_arc = road_map.length - GOAL_MARGIN
    goal = np.array(
        [
            np.interp(goal_arc, road_map.arc_lengths, world_line[:, 0]),
            np.interp(goal_arc, road_map.arc_lengths, world_line[:, 1]),
        ]
    )
    return Scene(scene_id, road_map, start, goal, goal_arc)


def _train_scene(scene_id: str, rng: np.random.Generator, config: WorldConfig) -> Scene:
    half_width = float(rng.uniform(2.5, 3.5))
    if rng.random() < 0.5:
        path = _Path().straight(float(rng.uniform(60.0, 100.0)))
        tag = SceneTag(SceneKind.STRAIGHT)
    else:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        radius = float(rng.uniform(8.0, 12.0))
        path = (
            _Path()
            .straight(float(rng.uniform(20.0, 40.0)))
            .arc(radius, sign * math.pi / 2)
            .straight(40.0)
        )
        tag = SceneTag(SceneKind.RIGHT_ANGLE, angle_deg=90.0 * sign, radius=radius)
    return _make_scene(scene_id, path.array(), half_width, tag, rng, config)


def _abnormal_scene(scene_id: str, rng: np.random.Generator, config: WorldConfig) -> Scene:
    half_width = float(rng.uniform(2.5, 3.5))
    angle = float(rng.choice(ABNORMAL_ANGLES)) * (1.0 if rng.random() < 0.5 else -1.0)
    radius = float(rng.uniform(6.0, 9.0))
    path = (
        _Path()
        .straight(float(rng.uniform(20.0, 40.0)))
        .arc(radius, math.radians(angle))
        .straight(40.0)
    )
    tag = SceneTag(SceneKind.ABNORMAL_TURN, angle_deg=angle, radius=radius)
    return _make_scene(scene_id, path.array(), half_width, tag, rng, config)


def _roundabout_scene(scene_id: str, rng: np.random.Generator, config: WorldConfig) -> Scene:
    half_width = float(rng.uniform(2.5, 3.5))
    radius = float(rng.uniform(8.0, 15.0))
    exit_angle = float(rng.choice(ROUNDABOUT_EXITS))
    # short entry arm so a 270 degree exit arm never crosses it
    entry = max(radius - half_width - 1.0, SPACING)
    path = _Path().straight(entry).arc(radius, math.radians(exit_angle)).straight(GOAL_MARGIN + 10.0)
    center = np.array([entry, radius])
    island = (center, radius - half_width - 0.5)
    tag = SceneTag(SceneKind.ROUNDABOUT, angle_deg=exit_angle, radius=radius)
    return _make_scene(scene_id, path.array(), half_width, tag, rng, config, island)


_BUILDERS = {
    "train": _train_scene,
    "abnormal": _abnormal_scene,
    "roundabout": _roundabout_scene,
}


def generate_suite(
    tag: str, episodes: int, rng_seed: int, config: WorldConfig | None = None
) -> list[Scene]:
    """Deterministic list of scenes for one suite."""
    if tag not in _BUILDERS:
        raise ContractError(f"unknown suite '{tag}', expected one of {SUITES}")
    if episodes < 1:
        raise ContractError("episodes must be >= 1")
    config = config or WorldConfig()
    rng = np.random.default_rng(rng_seed)
    builder = _BUILDERS[tag]
    scenes = [builder(f"{tag}-{rng_seed}-{i:04d}", rng, config) for i in range(episodes)]
    logger.debug("generated %d %s scenes", len(scenes), tag)
    return scenes
