"""Method x suite evaluation matrix and offline forecasting evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ._math import wrap_angle
from .config import PlannerConfig, WorldConfig
from .density import Record
from .engine import EpisodeEngine, collect_demonstrations, derive_seed
from .ensemble import EnsemblePosterior
from .errors import ContractError, UndefinedScoreError
from .metrics import (
    bootstrap_ratio_se,
    bootstrap_se,
    count_infractions,
    detection_score,
    infractions_per_km,
    min_ade_k,
    min_fde_k,
    recovery_score,
)
from .planner import Aggregator, RipPolicy, plan_candidates
from .types import (
    Demonstration,
    EgoState,
    EpisodeLog,
    ForecastRecord,
    ResultRow,
    Scene,
    TrajectoryLibrary,
)

logger = logging.getLogger(__name__)

BASELINE = "dim"


@dataclass(frozen=True, slots=True)
class MethodSpec:
    """A named planner: an aggregator, optionally restricted to member 0."""

    name: str
    aggregator: Aggregator
    single_model: bool = False

    @classmethod
    def parse(cls, name: str) -> MethodSpec:
        """'dim' or 'rip-<aggregator>', e.g. rip-wcm, rip-cvar:0.3, rip-mv:2."""
        name = name.strip().lower()
        if name == BASELINE:
            return cls(name, Aggregator.sample(0), single_model=True)
        prefix, _, spec = name.partition("-")
        if prefix != "rip" or not spec:
            raise ContractError(f"unknown method '{name}'")
        defaults = {"cvar": "cvar:0.5", "mv": "mv:1.0"}
        return cls(name, Aggregator.parse(defaults.get(spec, spec)))

    def posterior(self, posterior: EnsemblePosterior) -> EnsemblePosterior:
        """Members the method plans with; raises ContractError if its aggregator cannot use them."""
        members = posterior.subset([0]) if self.single_model else posterior
        self.aggregator.check_members(len(members))
        return members

    def policy(
        self,
        posterior: EnsemblePosterior,
        planner_config: PlannerConfig | None = None,
        library: TrajectoryLibrary | None = None,
    ) -> RipPolicy:
        return RipPolicy(self.posterior(posterior), self.aggregator, planner_config, library)


DEFAULT_METHODS = ("rip-wcm", "rip-ma", "rip-bcm", BASELINE)


def perturb_start(scene: Scene, rng_seed: int, lateral: float = 0.5, heading: float = 0.05) -> Scene:
    """Copy of scene with a seeded jitter of the initial pose."""
    rng = np.random.default_rng(rng_seed)
    start = scene.start
    offset = float(rng.uniform(-lateral, lateral))
    new_heading = wrap_angle(start.heading + float(rng.uniform(-heading, heading)))
    moved = EgoState(
        x=start.x - offset * math.sin(start.heading),
        y=start.y + offset * math.cos(start.heading),
        heading=new_heading,
        speed=start.speed,
    )
    return replace(scene, start=moved)


@dataclass(slots=True)
class ForecastSummary:
    mean_min_ade1: float
    mean_min_ade5: float
    mean_min_fde1: float
    records: list[ForecastRecord] = field(default_factory=list)


def evaluate_forecasts(
    data: Sequence[Demonstration | Record],
    posterior: EnsemblePosterior,
    aggregator: Aggregator,
    num_candidates: int = 50,
    rng_seed: int = 0,
    refine_iters: int = 0,
) -> ForecastSummary:
    """Rank sampled candidates per record and score them against the expert plan."""
    if not data:
        raise ContractError("evaluate_forecasts needs records")
    records = []
    for i, item in enumerate(data):
        ctx, truth = item.as_record() if isinstance(item, Demonstration) else item
        ranked = plan_candidates(
            ctx, posterior, aggregator, num_candidates, derive_seed(rng_seed, i), refine_iters
        )
        records.append(ForecastRecord(ctx, truth, [d.plan for d in ranked]))
    k5 = min(5, num_candidates)
    return ForecastSummary(
        mean_min_ade1=float(np.mean([min_ade_k(r.candidates, r.ground_truth, 1) for r in records])),
        mean_min_ade5=float(np.mean([min_ade_k(r.candidates, r.ground_truth, k5) for r in records])),
        mean_min_fde1=float(np.mean([min_fde_k(r.candidates, r.ground_truth, 1) for r in records])),
        records=records,
    )


def run_trials(
    scenes: Sequence[Scene],
    method: MethodSpec,
    posterior: EnsemblePosterior,
    trials: int,
    rng_seed: int,
    planner_config: PlannerConfig | None = None,
    world_config: WorldConfig | None = None,
    library: TrajectoryLibrary | None = None,
) -> list[EpisodeLog]:
    """trials seeded runs per scene; seed j is shared by every method."""
    planner_config = planner_config or PlannerConfig()
    engine = EpisodeEngine(world_config, goal_tolerance=planner_config.epsilon)
    policy = method.policy(posterior, planner_config, library)
    logs = []
    for s, scene in enumerate(scenes):
        for t in range(trials):
            seed = derive_seed(rng_seed, s * trials + t)
            start_scene = perturb_start(scene, seed) if trials > 1 else scene
            log = engine.run(start_scene, policy, seed)
            logs.append(log)
    return logs


def summarize(
    method: str,
    suite: str,
    logs: Sequence[EpisodeLog],
    baseline_logs: Sequence[EpisodeLog] | None,
    rng_seed: int = 0,
) -> ResultRow:
    outcomes = [float(log.success) for log in logs]
    distances = [log.distance_driven for log in logs]
    try:
        rate = infractions_per_km(logs)
        infra_se = bootstrap_ratio_se(
            [count_infractions(log) for log in logs], distances, rng_seed=rng_seed, scale=1000.0
        )
    except ContractError:
        rate, infra_se = math.nan, math.nan
    try:
        auroc, corr = detection_score(logs)
    except UndefinedScoreError:
        auroc, corr = None, None
    recovery = recovery_score(logs, baseline_logs) if baseline_logs is not None else None
    return ResultRow(
        method=method,
        suite=suite,
        trials=len(logs),
        success_rate=float(np.mean(outcomes)),
        success_se=bootstrap_se(outcomes, rng_seed=rng_seed),
        infractions_per_km=rate,
        infra_se=infra_se,
        detection_auroc=auroc,
        detection_corr=corr,
        recovery_score=recovery,
    )


def run_matrix(
    methods: Sequence[str | MethodSpec],
    suites: Mapping[str, Sequence[Scene]],
    trials: int,
    rng_seed: int,
    posterior: EnsemblePosterior,
    planner_config: PlannerConfig | None = None,
    world_config: WorldConfig | None = None,
    library: TrajectoryLibrary | None = None,
    forecast_records: int = 20,
    forecast_candidates: int = 50,
) -> tuple[list[ResultRow], dict[tuple[str, str], list[EpisodeLog]]]:
    """Evaluate every (method, suite) cell on paired seeds.

    Recovery is measured against the single-model baseline, which is run even
    when it is not among the methods. Forecast columns use up to
    forecast_records expert decision points from the suite's scenes.
    """
    if trials < 1:
        raise ContractError("trials must be >= 1")
    specs = [m if isinstance(m, MethodSpec) else MethodSpec.parse(m) for m in methods]
    if not specs:
        raise ContractError("no methods given")
    for spec in specs:
        spec.posterior(posterior)
    logs: dict[tuple[str, str], list[EpisodeLog]] = {}

    def cell(spec: MethodSpec, suite: str) -> list[EpisodeLog]:
        key = (spec.name, suite)
        if key not in logs:
            logs[key] = run_trials(
                suites[suite], spec, posterior, trials, rng_seed, planner_config, world_config, library
            )
        return logs[key]

    rows = []
    baseline = MethodSpec.parse(BASELINE)
    for suite in suites:
        demos: list[Demonstration] = []
        if forecast_records > 0:
            demos = collect_demonstrations(suites[suite], world_config, stride=4)[:forecast_records]
        baseline_logs = cell(baseline, suite)
        for spec in specs:
            row = summarize(spec.name, suite, cell(spec, suite), baseline_logs, rng_seed)
            if demos:
                summary = evaluate_forecasts(
                    demos, spec.posterior(posterior), spec.aggregator, forecast_candidates, rng_seed
                )
                row.mean_min_ade1 = summary.mean_min_ade1
                row.mean_min_ade5 = summary.mean_min_ade5
                row.mean_min_fde1 = summary.mean_min_fde1
            logger.info(
                "%s on %s: success %.3f, %.2f infractions/km",
                spec.name, suite, row.success_rate, row.infractions_per_km,
            )
            rows.append(row)
    order = {spec.name: i for i, spec in enumerate(specs)}
    rows.sort(key=lambda r: order[r.method])
    return rows, {key: value for key, value in logs.items() if key[0] in order}
