"""Uncertainty-triggered expert querying with online ensemble fine-tuning.

At each replan tick the robust planner proposes y*. When the ensemble's
disagreement u(y*) exceeds tau, the expert's plan is executed instead, stored
in a FIFO buffer and every member takes a few Adam steps on its own bootstrap
resample of the buffer.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import PlannerConfig, WorldConfig
from .density import Record, fine_tune, mean_nll
from .engine import EpisodeEngine, ExpertPolicy, derive_seed
from .ensemble import EnsemblePosterior
from .errors import CalibrationError, ContractError
from .metrics import bootstrap_se, detection_windows
from .planner import Aggregator, RipPolicy, diagnose, score_plans
from .types import EgoState, EpisodeLog, PlanDiagnostics, Scene, SceneContext, Trajectory, TrajectoryLibrary

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class AdaptationConfig:
    tau: float  # variance threshold; math.inf disables querying
    buffer_capacity: int = 256
    update_steps: int = 20
    update_lr: float = 1e-3
    max_queries: int | None = None

    def __post_init__(self) -> None:
        if math.isnan(self.tau) or self.tau < 0:
            raise ContractError("tau must be >= 0")
        if self.update_steps < 1:
            raise ContractError("update_steps must be >= 1")
        if self.buffer_capacity < 1:
            raise ContractError("buffer_capacity must be >= 1")
        if self.update_lr <= 0:
            raise ContractError("update_lr must be positive")
        if self.max_queries is not None and self.max_queries < 0:
            raise ContractError("max_queries must be >= 0")


class FeedbackBuffer:
    """FIFO store of expert demonstrations gathered online."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self._records: deque[Record] = deque(maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self._records.maxlen

    def add(self, ctx: SceneContext, plan: Trajectory) -> None:
        self._records.append((ctx, plan))

    def records(self) -> list[Record]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)


def calibrate_tau(
    logs: Sequence[EpisodeLog], target_false_negative_rate: float = 0.1
) -> float:
    """Largest tau whose miss rate on infraction windows stays within target.

    A positive window is missed when its max variance is below tau. Returns
    +inf when every positive window may be missed.
    """
    if not 0.0 <= target_false_negative_rate <= 1.0:
        raise ContractError("target false-negative rate must lie in [0, 1]")
    features, labels = detection_windows(logs)
    positives = np.sort(features[labels == 1])
    if len(positives) == 0:
        raise CalibrationError("no infraction windows to calibrate on")
    allowed = math.floor(target_false_negative_rate * len(positives) + 1e-12)
    tau = math.inf if allowed >= len(positives) else float(positives[allowed])
    logger.debug(
        "calibrated tau=%g from %d positive and %d clean windows (target %.3f)",
        tau, len(positives), int(np.sum(labels == 0)), target_false_negative_rate,
    )
    return tau


def update_posterior(
    posterior: EnsemblePosterior,
    buffer: FeedbackBuffer,
    config: AdaptationConfig,
    rng_seed: int,
) -> EnsemblePosterior:
    """Fine-tune every member on its own with-replacement resample of the buffer."""
    records = buffer.records()
    if not records:
        return posterior
    children = np.random.SeedSequence(rng_seed).spawn(len(posterior))
    members = []
    for member, child in zip(posterior.members, children):
        rng = np.random.default_rng(child)
        resample = [records[i] for i in rng.integers(0, len(records), size=len(records))]
        members.append(fine_tune(member, resample, config.update_steps, config.update_lr))
    return posterior.with_members(members)


def _mean_member_nll(posterior: EnsemblePosterior, data: Sequence[Record]) -> float:
    return float(np.mean([mean_nll(m, data) for m in posterior.members]))


class AdaRipPolicy:
    """Robust planner that defers to the expert when the ensemble disagrees.

    The posterior and buffer are updated in place across calls; pass a fresh
    policy for an independent run.
    """

    def __init__(
        self,
        posterior: EnsemblePosterior,
        aggregator: Aggregator,
        config: AdaptationConfig,
        planner_config: PlannerConfig | None = None,
        world_config: WorldConfig | None = None,
        library: TrajectoryLibrary | None = None,
        buffer: FeedbackBuffer | None = None,
        reference_data: Sequence[Record] | None = None,
        rng_seed: int = 0,
    ):
        self.posterior = posterior
        self.aggregator = aggregator
        self.config = config
        self.planner_config = planner_config or PlannerConfig()
        self.library = library
        self.expert = ExpertPolicy(world_config)
        self.buffer = buffer if buffer is not None else FeedbackBuffer(config.buffer_capacity)
        self.reference_data = list(reference_data) if reference_data else None
        self.rng_seed = rng_seed
        self.queries = 0

    def _may_query(self) -> bool:
        cap = self.config.max_queries
        return cap is None or self.queries < cap

    def plan(
        self, ctx: SceneContext, scene: Scene, state: EgoState, rng_seed: int = 0
    ) -> PlanDiagnostics:
        rip = RipPolicy(self.posterior, self.aggregator, self.planner_config, self.library)
        diag = rip.plan_context(ctx, rng_seed)
        if not (diag.epistemic_variance > self.config.tau and self._may_query()):
            return diag

        plan = self.expert.expert_plan(scene, state)
        _, lps, goal_lps = score_plans(
            plan.states[None], ctx, self.posterior, None, self.aggregator
        )
        executed = diagnose(plan, lps[0], float(goal_lps[0]), self.posterior, self.aggregator)
        self.buffer.add(ctx, plan)
        before = _mean_member_nll(self.posterior, self.buffer.records())
        reference_before = (
            _mean_member_nll(self.posterior, self.reference_data) if self.reference_data else None
        )
        self.posterior = update_posterior(
            self.posterior, self.buffer, self.config, derive_seed(self.rng_seed, self.queries)
        )
        self.queries += 1
        after = _mean_member_nll(self.posterior, self.buffer.records())
        if reference_before is not None:
            reference_after = _mean_member_nll(self.posterior, self.reference_data)
            logger.info(
                "query %d (u=%.4g > tau=%.4g): buffer NLL %.3f -> %.3f, reference NLL %.3f -> %.3f",
                self.queries, diag.epistemic_variance, self.config.tau,
                before, after, reference_before, reference_after,
            )
        else:
            logger.info(
                "query %d (u=%.4g > tau=%.4g): buffer NLL %.3f -> %.3f",
                self.queries, diag.epistemic_variance, self.config.tau, before, after,
            )
        return executed


def adarip_episode(
    scene: Scene,
    posterior: EnsemblePosterior,
    aggregator: Aggregator,
    config: AdaptationConfig,
    rng_seed: int = 0,
    planner_config: PlannerConfig | None = None,
    world_config: WorldConfig | None = None,
    library: TrajectoryLibrary | None = None,
    buffer: FeedbackBuffer | None = None,
) -> tuple[EpisodeLog, EnsemblePosterior, int]:
    """One AdaRIP episode. Returns the log, the updated posterior and the query count."""
    policy = AdaRipPolicy(
        posterior, aggregator, config, planner_config, world_config, library, buffer,
        rng_seed=rng_seed,
    )
    engine = EpisodeEngine(world_config, goal_tolerance=policy.planner_config.epsilon)
    log = engine.run(scene, policy, rng_seed)
    log.expert_queries = policy.queries
    return log, policy.posterior, policy.queries


@dataclass(slots=True)
class AdaptationPoint:
    budget: int
    success_rate: float
    success_se: float
    queries: int
    episodes: int


def adaptation_curve(
    scenes: Sequence[Scene],
    posterior: EnsemblePosterior,
    aggregator: Aggregator,
    config: AdaptationConfig,
    budgets: Sequence[int],
    rng_seed: int = 0,
    planner_config: PlannerConfig | None = None,
    world_config: WorldConfig | None = None,
    library: TrajectoryLibrary | None = None,
    reference_data: Sequence[Record] | None = None,
) -> list[AdaptationPoint]:
    """Success rate over the suite for each expert-query budget.

    Every budget starts from the given posterior with an empty buffer; within
    one budget run the posterior and buffer carry over from scene to scene.
    Episode seeds are shared between budgets.
    """
    budgets = [int(b) for b in budgets]
    if not budgets or budgets != sorted(budgets) or budgets[0] < 0:
        raise ContractError("budgets must be non-empty, non-negative and ascending")
    if not scenes:
        raise ContractError("adaptation_curve needs scenes")
    planner_config = planner_config or PlannerConfig()
    engine = EpisodeEngine(world_config, goal_tolerance=planner_config.epsilon)
    points = []
    for budget in budgets:
        policy = AdaRipPolicy(
            posterior,
            aggregator,
            replace(config, max_queries=budget),
            planner_config,
            world_config,
            library,
            reference_data=reference_data,
            rng_seed=derive_seed(rng_seed, budget),
        )
        outcomes = []
        for i, scene in enumerate(scenes):
            queries_before = policy.queries
            log = engine.run(scene, policy, derive_seed(rng_seed, i))
            log.expert_queries = policy.queries - queries_before
            outcomes.append(float(log.success))
        point = AdaptationPoint(
            budget=budget,
            success_rate=float(np.mean(outcomes)),
            success_se=bootstrap_se(outcomes, rng_seed=rng_seed),
            queries=policy.queries,
            episodes=len(outcomes),
        )
        logger.info(
            "budget %d: success %.3f +- %.3f with %d queries",
            budget, point.success_rate, point.success_se, point.queries,
        )
        points.append(point)
    return points
