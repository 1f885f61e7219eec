"""Factories for small models, contexts, roads and episode logs."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rip_planner import (
    Architecture,
    DensityModel,
    EgoState,
    EnsemblePosterior,
    EpisodeLog,
    Infraction,
    InfractionKind,
    Obstacle,
    RoadMap,
    Scene,
    SceneContext,
    SceneKind,
    SceneTag,
    Trajectory,
    WorldConfig,
)


def make_arch(horizon: int = 4, past_length: int = 3, num_beams: int = 5, hidden_size: int = 6) -> Architecture:
    """A tiny architecture that keeps finite-difference checks fast."""
    return Architecture(
        horizon=horizon, past_length=past_length, num_beams=num_beams, hidden_size=hidden_size
    )


def make_world(horizon: int = 4, past_length: int = 3, num_beams: int = 6, **overrides) -> WorldConfig:
    return WorldConfig(horizon=horizon, past_length=past_length, num_beams=num_beams, **overrides)


def make_context(arch: Architecture, rng: np.random.Generator) -> SceneContext:
    past = np.cumsum(rng.normal(0.0, 0.3, size=(arch.past_length, 2)), axis=0)
    past -= past[-1]
    return SceneContext(
        past=past,
        scan=rng.uniform(0.0, arch.max_range, size=arch.num_beams),
        goal=rng.normal(0.0, 5.0, size=2),
    )


def make_plan(arch: Architecture, rng: np.random.Generator, speed: float = 1.0) -> Trajectory:
    steps = np.column_stack([np.full(arch.horizon, speed), rng.normal(0.0, 0.2, arch.horizon)])
    return Trajectory(np.cumsum(steps, axis=0), dt=arch.dt)


def make_model(arch: Architecture, seed: int = 0, scale: float = 1.0) -> DensityModel:
    """Randomly initialized model; scale > 1 makes the heads non-trivial."""
    model = DensityModel.initialize(arch, seed)
    if scale == 1.0:
        return model
    rng = np.random.default_rng(seed + 1000)
    params = model.params
    for name in ("mean_w", "scale_w", "mean_b", "scale_b"):
        params = params.replace(name, rng.normal(0.0, 0.3 * scale, size=params.segment(name).shape))
    return model.with_params(params)


def make_posterior(arch: Architecture, k: int = 3, seed: int = 0) -> EnsemblePosterior:
    return EnsemblePosterior.uniform([make_model(arch, seed + i, scale=2.0) for i in range(k)])


def make_records(arch: Architecture, n: int, seed: int = 0) -> list[tuple[SceneContext, Trajectory]]:
    rng = np.random.default_rng(seed)
    return [(make_context(arch, rng), make_plan(arch, rng)) for _ in range(n)]


def make_straight_road(
    length: float = 80.0,
    half_width: float = 3.0,
    obstacles: list[Obstacle] | None = None,
    spacing: float = 0.5,
) -> RoadMap:
    xs = np.arange(0.0, length + spacing / 2, spacing)
    centerline = np.column_stack([xs, np.zeros_like(xs)])
    return RoadMap(centerline, half_width, obstacles or [], SceneTag(SceneKind.STRAIGHT))


def make_circle_road(radius: float = 10.0, half_width: float = 3.0, laps: float = 1.5) -> RoadMap:
    """Counter-clockwise circle centered at (0, radius) starting at the origin heading +x."""
    n = int(laps * 2 * math.pi * radius / 0.5)
    angles = np.linspace(0.0, laps * 2 * math.pi, n + 1)
    centerline = np.column_stack([radius * np.sin(angles), radius - radius * np.cos(angles)])
    return RoadMap(centerline, half_width, [], SceneTag(SceneKind.ROUNDABOUT, radius=radius))


def make_straight_scene(
    length: float = 80.0,
    half_width: float = 3.0,
    obstacles: list[Obstacle] | None = None,
    lateral: float = 0.0,
    speed: float = 5.0,
) -> Scene:
    road = make_straight_road(length, half_width, obstacles)
    goal_arc = length - 25.0
    return Scene(
        scene_id="straight",
        road_map=road,
        start=EgoState(0.0, lateral, 0.0, speed),
        goal=np.array([goal_arc, 0.0]),
        goal_arc_length=goal_arc,
    )


def make_log(
    trace: list[float],
    infraction: InfractionKind | None = None,
    scene_id: str = "s",
    seed: int = 0,
    distance: float = 100.0,
) -> EpisodeLog:
    """Episode log ending with an infraction at the last traced step, or a success."""
    infractions = []
    if infraction is not None:
        infractions.append(Infraction(len(trace) - 1, infraction))
    return EpisodeLog(
        scene_id=scene_id,
        seed=seed,
        states=[],
        infractions=infractions,
        uncertainty_trace=list(trace),
        nll_trace=[-v for v in trace],
        success=infraction is None,
        distance_driven=distance,
    )


def numeric_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (f(up) - f(down)) / (2 * h)
    return grad


@pytest.fixture
def arch():
    return make_arch()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def posterior(arch):
    return make_posterior(arch)


@pytest.fixture
def straight_scene():
    return make_straight_scene()
