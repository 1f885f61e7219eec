from rip_planner.types import (
    Action,
    Demonstration,
    EgoState,
    EpisodeLog,
    ForecastRecord,
    GaussianStep,
    GoalSpec,
    Infraction,
    InfractionKind,
    Obstacle,
    PlanDiagnostics,
    ResultRow,
    RoadMap,
    Scene,
    SceneContext,
    SceneKind,
    SceneTag,
    Trajectory,
    TrajectoryLibrary,
)
from rip_planner.config import PlannerConfig, TrainingConfig, WorldConfig
from rip_planner.errors import (
    CalibrationError,
    ContractError,
    ExpertQueryError,
    NumericalDomainError,
    PlanningError,
    RipError,
    TrainingError,
    UndefinedScoreError,
)
from rip_planner.diffmath import AdamState, ParamVector, Tape, Var, adam_step, forward_backward
from rip_planner.density import (
    Architecture,
    DensityModel,
    encode_context,
    fine_tune,
    log_prob,
    log_prob_batch,
    mean_nll,
    mean_trajectory,
    sample,
    sample_batch,
    step_distribution,
    train_mle,
)
from rip_planner.ensemble import (
    EnsemblePosterior,
    bootstrap_split,
    epistemic_variance,
    member_log_probs,
    train_ensemble,
)
from rip_planner.planner import (
    Aggregator,
    AggregatorKind,
    RipPolicy,
    aggregate,
    aggregate_coefficients,
    objective,
    plan_candidates,
    plan_gradient,
    plan_library,
    score_plans,
)
from rip_planner.library import build_library
from rip_planner.world import (
    detect_infraction,
    expert_policy,
    inverse_dynamics,
    lateral_deviation,
    observe,
    step,
)
from rip_planner.suites import generate_suite
from rip_planner.trajectory import StateHistory
from rip_planner.engine import EpisodeEngine, ExpertPolicy, collect_demonstrations, run_episode
from rip_planner.adaptation import (
    AdaptationConfig,
    AdaRipPolicy,
    FeedbackBuffer,
    adaptation_curve,
    adarip_episode,
    calibrate_tau,
)
from rip_planner.metrics import (
    adaptation_score,
    ade,
    bootstrap_se,
    detection_score,
    infractions_per_km,
    min_ade_k,
    min_fde,
    recovery_score,
    sign_test,
)
from rip_planner.bench import MethodSpec, evaluate_forecasts, run_matrix

__all__ = [
    "Action",
    "AdaRipPolicy",
    "AdamState",
    "AdaptationConfig",
    "Aggregator",
    "AggregatorKind",
    "Architecture",
    "CalibrationError",
    "ContractError",
    "Demonstration",
    "DensityModel",
    "EgoState",
    "EnsemblePosterior",
    "EpisodeEngine",
    "EpisodeLog",
    "ExpertPolicy",
    "ExpertQueryError",
    "FeedbackBuffer",
    "ForecastRecord",
    "GaussianStep",
    "GoalSpec",
    "Infraction",
    "InfractionKind",
    "MethodSpec",
    "NumericalDomainError",
    "Obstacle",
    "ParamVector",
    "PlanDiagnostics",
    "PlannerConfig",
    "PlanningError",
    "ResultRow",
    "RipError",
    "RipPolicy",
    "RoadMap",
    "Scene",
    "SceneContext",
    "SceneKind",
    "SceneTag",
    "StateHistory",
    "Tape",
    "TrainingConfig",
    "TrainingError",
    "Trajectory",
    "TrajectoryLibrary",
    "UndefinedScoreError",
    "Var",
    "WorldConfig",
    "adam_step",
    "adaptation_curve",
    "adaptation_score",
    "adarip_episode",
    "ade",
    "aggregate",
    "aggregate_coefficients",
    "bootstrap_se",
    "bootstrap_split",
    "build_library",
    "calibrate_tau",
    "collect_demonstrations",
    "detect_infraction",
    "detection_score",
    "encode_context",
    "epistemic_variance",
    "evaluate_forecasts",
    "expert_policy",
    "fine_tune",
    "forward_backward",
    "generate_suite",
    "infractions_per_km",
    "inverse_dynamics",
    "lateral_deviation",
    "log_prob",
    "log_prob_batch",
    "mean_nll",
    "mean_trajectory",
    "member_log_probs",
    "min_ade_k",
    "min_fde",
    "objective",
    "observe",
    "plan_candidates",
    "plan_gradient",
    "plan_library",
    "recovery_score",
    "run_episode",
    "run_matrix",
    "sample",
    "sample_batch",
    "score_plans",
    "sign_test",
    "step",
    "step_distribution",
    "train_ensemble",
    "train_mle",
]
