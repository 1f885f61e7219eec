from __future__ import annotations

import logging
import math
from typing import Protocol, Sequence

import numpy as np

from ._math import to_ego_frame, to_world_frame
from .config import WorldConfig
from .errors import ContractError, ExpertQueryError, NumericalDomainError, PlanningError
from .trajectory import StateHistory
from .types import (
    Demonstration,
    EgoState,
    EpisodeLog,
    Infraction,
    InfractionKind,
    PlanDiagnostics,
    Scene,
    SceneContext,
    Trajectory,
)
from .world import (
    detect_infraction,
    expert_policy,
    inverse_dynamics,
    observe,
    project,
    route_goal,
    segment_reaches,
    step,
)

logger = logging.getLogger(__name__)


class Policy(Protocol):
    def plan(
        self, ctx: SceneContext, scene: Scene, state: EgoState, rng_seed: int
    ) -> PlanDiagnostics: ...


def derive_seed(rng_seed: int, index: int) -> int:
    """Independent child seed for the index-th tick, episode or event."""
    return int(np.random.SeedSequence([rng_seed, index]).generate_state(1)[0])


def drive_expert(
    scene: Scene, config: WorldConfig, max_steps: int
) -> tuple[list[EgoState], bool]:
    """Closed-loop expert run. Returns visited states (start first) and goal reach."""
    state = scene.start
    arc, _ = project(scene.road_map, state.position)
    states = [state]
    for _ in range(max_steps):
        target = expert_policy(state, scene.road_map, config, near_arc=arc)
        new = step(state, inverse_dynamics(state, target, config.dt, config.v_max), config)
        arc, _ = project(scene.road_map, new.position, near_arc=arc)
        reached = segment_reaches(state.position, new.position, scene.goal, config.goal_tolerance)
        states.append(new)
        state = new
        if reached:
            return states, True
    return states, False


class ExpertPolicy:
    """Plans by rolling the pure-pursuit expert forward for T steps."""

    def __init__(self, config: WorldConfig | None = None):
        self.config = config or WorldConfig()

    def expert_plan(self, scene: Scene, state: EgoState) -> Trajectory:
        cfg = self.config
        try:
            arc, _ = project(scene.road_map, state.position)
            positions = []
            current = state
            for _ in range(cfg.horizon):
                target = expert_policy(current, scene.road_map, cfg, near_arc=arc)
                current = step(current, inverse_dynamics(current, target, cfg.dt, cfg.v_max), cfg)
                arc, _ = project(scene.road_map, current.position, near_arc=arc)
                positions.append(current.position)
            plan = to_ego_frame(np.array(positions), state.position, state.heading)
            return Trajectory(plan, dt=cfg.dt)
        except (ContractError, ArithmeticError) as exc:
            raise ExpertQueryError(f"expert failed in scene {scene.scene_id}: {exc}") from exc

    def plan(
        self, ctx: SceneContext, scene: Scene, state: EgoState, rng_seed: int = 0
    ) -> PlanDiagnostics:
        return PlanDiagnostics(
            plan=self.expert_plan(scene, state),
            member_log_probs=np.empty(0),
            aggregate_value=0.0,
            goal_log_prob=0.0,
            epistemic_variance=0.0,
        )


class EpisodeEngine:
    """Runs closed-loop episodes of a plan-producing policy.

    goal_tolerance defaults to the world config's; planner-driven runs pass
    the planner epsilon so that goal reach matches the goal likelihood.

    Usage::

        engine = EpisodeEngine(replan_every=4, max_steps=200)
        log = engine.run(scene, policy, rng_seed=7)
        print(log.success, log.infractions)
    """

    def __init__(
        self,
        config: WorldConfig | None = None,
        replan_every: int | None = None,
        max_steps: int | None = None,
        goal_tolerance: float | None = None,
    ):
        self.config = config or WorldConfig()
        self.goal_tolerance = self.config.goal_tolerance if goal_tolerance is None else goal_tolerance
        self.replan_every = self.config.replan_every if replan_every is None else replan_every
        self.max_steps = self.config.max_steps if max_steps is None else max_steps
        if self.replan_every < 1:
            raise ContractError("replan_every must be >= 1")
        if self.max_steps < 0:
            raise ContractError("max_steps must be >= 0")
        if self.goal_tolerance <= 0:
            raise ContractError("goal_tolerance must be positive")

    def observe(self, scene: Scene, state: EgoState, history: StateHistory) -> SceneContext:
        cfg = self.config
        goal = route_goal(state, scene.road_map, scene.goal_arc_length, cfg.route_goal_distance)
        return observe(state, scene.road_map, history, goal, cfg)

    def run(self, scene: Scene, policy: Policy, rng_seed: int = 0) -> EpisodeLog:
        cfg = self.config
        state = scene.start
        history = StateHistory(cfg.past_length, state)
        states = [state]
        infractions: list[Infraction] = []
        uncertainty: list[float] = []
        nll: list[float] = []
        distance = 0.0
        steps = 0
        success = False

        while steps < self.max_steps and not success and not infractions:
            ctx = self.observe(scene, state, history)
            try:
                diag = policy.plan(ctx, scene, state, derive_seed(rng_seed, steps))
            except (PlanningError, NumericalDomainError) as exc:
                logger.warning("policy failed in %s at step %d: %s", scene.scene_id, steps, exc)
                break
            targets = to_world_frame(
                diag.plan.states[: self.replan_every], state.position, state.heading
            )
            for target in targets:
                new = step(state, inverse_dynamics(state, target, cfg.dt, cfg.v_max), cfg)
                distance += math.dist(state.position, new.position)
                uncertainty.append(diag.epistemic_variance)
                nll.append(diag.nll)
                kind = detect_infraction(new, scene.road_map, cfg.car_radius)
                reached = segment_reaches(state.position, new.position, scene.goal, self.goal_tolerance)
                state = new
                states.append(state)
                history.record(state)
                steps += 1
                if kind is not None:
                    infractions.append(Infraction(steps - 1, kind))
                    break
                if reached:
                    success = True
                    break
                if steps >= self.max_steps:
                    break

        if not success and not infractions:
            infractions.append(Infraction(steps, InfractionKind.TIMEOUT))
        outcome = "success" if success else infractions[0].kind.value
        logger.info(
            "episode %s seed %d: %s after %d steps, %.1f m", scene.scene_id, rng_seed, outcome, steps, distance
        )
        return EpisodeLog(
            scene_id=scene.scene_id,
            seed=rng_seed,
            states=states,
            infractions=infractions,
            uncertainty_trace=uncertainty,
            nll_trace=nll,
            success=success,
            distance_driven=distance,
        )

    def collect(self, scenes: Sequence[Scene], stride: int = 1) -> list[Demonstration]:
        """Expert decision points with a full T-step future before the goal."""
        if stride < 1:
            raise ContractError("stride must be >= 1")
        cfg = self.config
        records = []
        for scene in scenes:
            states, reached = drive_expert(scene, cfg, self.max_steps)
            if not reached:
                logger.warning("expert did not reach the goal in %s", scene.scene_id)
            history = StateHistory(cfg.past_length)
            for i, state in enumerate(states):
                history.record(state)
                if i % stride or i + cfg.horizon >= len(states):
                    continue
                future = np.array([s.position for s in states[i + 1 : i + 1 + cfg.horizon]])
                records.append(
                    Demonstration(
                        scene_id=scene.scene_id,
                        step=i,
                        ctx=self.observe(scene, state, history),
                        plan=Trajectory(to_ego_frame(future, state.position, state.heading), dt=cfg.dt),
                    )
                )
        logger.info("collected %d demonstrations from %d scenes", len(records), len(scenes))
        return records


def run_episode(
    scene: Scene,
    policy: Policy,
    replan_every: int = 4,
    max_steps: int = 200,
    rng_seed: int = 0,
    config: WorldConfig | None = None,
) -> EpisodeLog:
    return EpisodeEngine(config, replan_every, max_steps).run(scene, policy, rng_seed)


def collect_demonstrations(
    scenes: Sequence[Scene], config: WorldConfig | None = None, stride: int = 1
) -> list[Demonstration]:
    return EpisodeEngine(config).collect(scenes, stride)
