"""Planar driving world: dynamics, expert, observations and infractions."""

from __future__ import annotations

import logging
import math

import numpy as np

from ._math import (
    beam_directions,
    point_segment_projection,
    ray_circle_hits,
    ray_segment_hits,
    to_ego_frame,
    wrap_angle,
)
from .config import WorldConfig
from .errors import ContractError
from .trajectory import StateHistory
from .types import Action, EgoState, InfractionKind, RoadMap, SceneContext

logger = logging.getLogger(__name__)

DEFAULT_WORLD = WorldConfig()


def inverse_dynamics(
    state: EgoState, next_position: np.ndarray, dt: float, v_max: float = DEFAULT_WORLD.v_max
) -> Action:
    """Action that points at next_position and reaches it in dt."""
    if dt <= 0:
        raise ContractError("dt must be positive")
    dx = float(next_position[0]) - state.x
    dy = float(next_position[1]) - state.y
    distance = math.hypot(dx, dy)
    if distance == 0.0:
        return Action(target_speed=0.0, target_heading=state.heading)
    return Action(
        target_speed=min(distance / dt, v_max),
        target_heading=math.atan2(dy, dx),
    )


def step(state: EgoState, action: Action, config: WorldConfig = DEFAULT_WORLD) -> EgoState:
    """Clipped unicycle transition over one dt."""
    dt = config.dt
    max_turn = config.omega_max * dt
    turn = min(max(wrap_angle(action.target_heading - state.heading), -max_turn), max_turn)
    heading = wrap_angle(state.heading + turn)

    max_dv = config.a_max * dt
    dv = min(max(action.target_speed - state.speed, -max_dv), max_dv)
    speed = min(max(state.speed + dv, 0.0), config.v_max)

    return EgoState(
        x=state.x + speed * dt * math.cos(heading),
        y=state.y + speed * dt * math.sin(heading),
        heading=heading,
        speed=speed,
    )


def project(
    road_map: RoadMap, point: np.ndarray, near_arc: float | None = None, window: float = 10.0
) -> tuple[float, float]:
    """Arc length of the closest centerline point and the signed lateral offset.

    With near_arc, only segments within window meters of that arc length are
    searched; lateral offset is positive to the left of the direction of travel.
    """
    line = road_map.centerline
    if len(line) < 2:
        raise ContractError("projection needs a centerline")
    starts, ends = line[:-1], line[1:]
    arcs = road_map.arc_lengths
    candidates = np.arange(len(starts))
    if near_arc is not None:
        mask = (arcs[1:] >= near_arc - window) & (arcs[:-1] <= near_arc + window)
        if np.any(mask):
            candidates = candidates[mask]
    distances, u = point_segment_projection(np.asarray(point, dtype=np.float64), starts[candidates], ends[candidates])
    best = int(np.argmin(distances))
    seg = int(candidates[best])
    arc = arcs[seg] + u[best] * (arcs[seg + 1] - arcs[seg])
    tangent = ends[seg] - starts[seg]
    rel = np.asarray(point, dtype=np.float64) - starts[seg]
    side = 1.0 if tangent[0] * rel[1] - tangent[1] * rel[0] >= 0.0 else -1.0
    return float(arc), side * float(distances[best])


def point_at_arc(road_map: RoadMap, arc: float) -> np.ndarray:
    arc = min(max(arc, 0.0), road_map.length)
    arcs = road_map.arc_lengths
    return np.array(
        [
            np.interp(arc, arcs, road_map.centerline[:, 0]),
            np.interp(arc, arcs, road_map.centerline[:, 1]),
        ]
    )


def lateral_deviation(road_map: RoadMap, point: np.ndarray) -> float:
    """Distance from point to the nearest centerline segment."""
    return abs(project(road_map, point)[1])


def expert_policy(
    state: EgoState,
    road_map: RoadMap,
    config: WorldConfig = DEFAULT_WORLD,
    near_arc: float | None = None,
) -> np.ndarray:
    """Pure pursuit at cruise speed; returns the next world position.

    The lookahead point sits config.lookahead meters of arc ahead of the
    projection of the ego onto the centerline.
    """
    arc, _ = project(road_map, state.position, near_arc)
    target = point_at_arc(road_map, arc + config.lookahead)
    delta = target - state.position
    distance = math.hypot(delta[0], delta[1])
    speed = config.cruise_speed
    heading = state.heading
    if distance > 1e-9:
        alpha = wrap_angle(math.atan2(delta[1], delta[0]) - state.heading)
        curvature = 2.0 * math.sin(alpha) / distance
        heading = state.heading + speed * curvature * config.dt
    return state.position + speed * config.dt * np.array([math.cos(heading), math.sin(heading)])


def expert_rollout(
    state: EgoState,
    road_map: RoadMap,
    steps: int,
    config: WorldConfig = DEFAULT_WORLD,
) -> list[EgoState]:
    """States visited by following the expert for steps ticks."""
    arc, _ = project(road_map, state.position)
    states = []
    for _ in range(steps):
        target = expert_policy(state, road_map, config, near_arc=arc)
        state = step(state, inverse_dynamics(state, target, config.dt, config.v_max), config)
        arc, _ = project(road_map, state.position, near_arc=arc)
        states.append(state)
    return states


def route_goal(
    state: EgoState,
    road_map: RoadMap,
    goal_arc_length: float,
    distance: float = DEFAULT_WORLD.route_goal_distance,
) -> np.ndarray:
    """World-frame centerline point distance meters ahead, capped at the final goal."""
    arc, _ = project(road_map, state.position)
    return point_at_arc(road_map, min(arc + distance, goal_arc_length))


def range_scan(state: EgoState, road_map: RoadMap, config: WorldConfig = DEFAULT_WORLD) -> np.ndarray:
    """Ray-cast distances against both lane boundaries and obstacles."""
    origin = state.position
    directions = beam_directions(config.num_beams, state.heading)
    hits = np.full(config.num_beams, np.inf)
    for boundary in (road_map.left_boundary, road_map.right_boundary):
        hits = np.minimum(hits, ray_segment_hits(origin, directions, boundary[:-1], boundary[1:]))
    if road_map.obstacles:
        centers = np.array([[o.x, o.y] for o in road_map.obstacles])
        radii = np.array([o.radius for o in road_map.obstacles])
        hits = np.minimum(hits, ray_circle_hits(origin, directions, centers, radii))
    return np.minimum(hits, config.max_range)


def observe(
    state: EgoState,
    road_map: RoadMap,
    history: StateHistory,
    goal: np.ndarray,
    config: WorldConfig = DEFAULT_WORLD,
) -> SceneContext:
    """Ego-frame observation: past positions, range scan and goal.

    history must end with state and is padded by repeating its oldest entry.
    """
    past = history.positions()
    if len(past) != config.past_length:
        raise ContractError(f"history holds {len(past)} positions, expected {config.past_length}")
    origin = state.position
    return SceneContext(
        past=to_ego_frame(past, origin, state.heading),
        scan=range_scan(state, road_map, config),
        goal=to_ego_frame(np.asarray(goal, dtype=np.float64)[None], origin, state.heading)[0],
    )


def detect_infraction(
    state: EgoState, road_map: RoadMap, car_radius: float = DEFAULT_WORLD.car_radius
) -> InfractionKind | None:
    """Collision takes precedence over OffLane."""
    for obstacle in road_map.obstacles:
        if math.hypot(state.x - obstacle.x, state.y - obstacle.y) < obstacle.radius + car_radius:
            return InfractionKind.COLLISION
    if lateral_deviation(road_map, state.position) > road_map.lane_half_width:
        return InfractionKind.OFF_LANE
    return None


def segment_reaches(start: np.ndarray, end: np.ndarray, goal: np.ndarray, tolerance: float) -> bool:
    """True if the segment start->end passes within tolerance of goal."""
    start, end = np.asarray(start, dtype=np.float64), np.asarray(end, dtype=np.float64)
    if np.array_equal(start, end):
        return math.dist(start, goal) <= tolerance
    distances, _ = point_segment_projection(np.asarray(goal, dtype=np.float64), start[None], end[None])
    return bool(distances[0] <= tolerance)
