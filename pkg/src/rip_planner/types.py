from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._math import cumulative_arc_length, offset_polyline
from .errors import ContractError


def _as_points(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ContractError(f"{name} must have shape (N, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(slots=True, eq=False)
class Trajectory:
    """A fixed-horizon plan y = (s_1, ..., s_T) in the ego frame (meters)."""

    states: np.ndarray  # (T, 2)
    dt: float = 0.25

    def __post_init__(self) -> None:
        self.states = _as_points(self.states, "trajectory states")
        if len(self.states) == 0:
            raise ContractError("trajectory must contain at least one state")
        if self.dt <= 0:
            raise ContractError("dt must be positive")

    @property
    def horizon(self) -> int:
        return len(self.states)

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


@dataclass(slots=True, eq=False)
class SceneContext:
    """The observation x: ego-frame past, synthetic range scan and goal."""

    past: np.ndarray  # (P, 2), most recent last
    scan: np.ndarray  # (R,)
    goal: np.ndarray  # (2,)

    def __post_init__(self) -> None:
        self.past = _as_points(self.past, "past")
        self.scan = np.asarray(self.scan, dtype=np.float64).reshape(-1)
        self.goal = np.asarray(self.goal, dtype=np.float64).reshape(2)
        if np.any(self.scan < 0) or not np.all(np.isfinite(self.scan)):
            raise ContractError("scan readings must be finite and non-negative")
        if not np.all(np.isfinite(self.goal)):
            raise ContractError("goal must be finite")


@dataclass(slots=True, eq=False)
class GaussianStep:
    """One conditional 2D Gaussian of the autoregressive model."""

    mean: np.ndarray  # (2,)
    scale_lower: np.ndarray  # (2, 2) lower-triangular Cholesky factor

    @property
    def covariance(self) -> np.ndarray:
        return self.scale_lower @ self.scale_lower.T


@dataclass(slots=True)
class EgoState:
    """World-frame pose and speed of the ego vehicle."""

    x: float
    y: float
    heading: float  # radians
    speed: float  # m/s

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(slots=True)
class Action:
    target_speed: float
    target_heading: float


@dataclass(slots=True)
class Obstacle:
    x: float
    y: float
    radius: float


class SceneKind(str, enum.Enum):
    STRAIGHT = "Straight"
    RIGHT_ANGLE = "RightAngle"
    ABNORMAL_TURN = "AbnormalTurn"
    ROUNDABOUT = "Roundabout"


@dataclass(slots=True)
class SceneTag:
    kind: SceneKind
    angle_deg: float | None = None  # turn angle for RightAngle / AbnormalTurn
    radius: float | None = None  # roundabout radius


@dataclass(slots=True, eq=False)
class RoadMap:
    """A single-lane road: centerline polyline, lane width and obstacles."""

    centerline: np.ndarray  # (N, 2) world frame
    lane_half_width: float
    obstacles: list[Obstacle]
    tag: SceneTag
    arc_lengths: np.ndarray = field(init=False, repr=False)
    left_boundary: np.ndarray = field(init=False, repr=False)
    right_boundary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.centerline = _as_points(self.centerline, "centerline")
        if len(self.centerline) < 2:
            raise ContractError("centerline needs at least 2 points")
        steps = np.linalg.norm(np.diff(self.centerline, axis=0), axis=1)
        if np.any(steps <= 0):
            raise ContractError("consecutive centerline points must be distinct")
        if self.lane_half_width <= 0:
            raise ContractError("lane_half_width must be positive")
        self.arc_lengths = cumulative_arc_length(self.centerline)
        self.left_boundary = offset_polyline(self.centerline, self.lane_half_width)
        self.right_boundary = offset_polyline(self.centerline, -self.lane_half_width)

    @property
    def length(self) -> float:
        return float(self.arc_lengths[-1])


@dataclass(slots=True, eq=False)
class Scene:
    """One episode specification: map, start state and final goal."""

    scene_id: str
    road_map: RoadMap
    start: EgoState
    goal: np.ndarray  # (2,) world frame
    goal_arc_length: float


class InfractionKind(str, enum.Enum):
    OFF_LANE = "OffLane"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"


@dataclass(slots=True)
class Infraction:
    step: int
    kind: InfractionKind


@dataclass(slots=True)
class EpisodeLog:
    """Closed-loop record of one episode."""

    scene_id: str
    seed: int
    states: list[EgoState]
    infractions: list[Infraction]
    uncertainty_trace: list[float]  # epistemic variance of the executed plan, per step
    nll_trace: list[float]  # negative mean member log-likelihood, per step
    success: bool
    distance_driven: float
    expert_queries: int = 0

    def __post_init__(self) -> None:
        if self.success and self.infractions:
            raise ContractError("a successful episode cannot carry infractions")
        if self.distance_driven < 0:
            raise ContractError("distance_driven must be non-negative")


@dataclass(slots=True, eq=False)
class GoalSpec:
    """Goal likelihood p(G|y) = N(y_T; goal_position, eps^2 I)."""

    goal_position: np.ndarray
    tolerance_epsilon: float = 1.0

    def __post_init__(self) -> None:
        self.goal_position = np.asarray(self.goal_position, dtype=np.float64).reshape(2)
        if self.tolerance_epsilon <= 0:
            raise ContractError("tolerance_epsilon must be positive")


@dataclass(slots=True, eq=False)
class PlanDiagnostics:
    """A candidate plan with its objective decomposition."""

    plan: Trajectory
    member_log_probs: np.ndarray
    aggregate_value: float
    goal_log_prob: float
    epistemic_variance: float
    iterations_used: int = 0

    @property
    def value(self) -> float:
        return self.aggregate_value + self.goal_log_prob

    @property
    def nll(self) -> float:
        if len(self.member_log_probs) == 0:
            return math.nan
        return -float(np.mean(self.member_log_probs))


@dataclass(slots=True, eq=False)
class TrajectoryLibrary:
    """A fixed set of ego-frame plans searched exhaustively."""

    centroids: np.ndarray  # (L, T, 2)
    dt: float
    source_meta: dict

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 3 or self.centroids.shape[2] != 2:
            raise ContractError("centroids must have shape (L, T, 2)")
        if len(self.centroids) < 1:
            raise ContractError("library must contain at least one centroid")

    def __len__(self) -> int:
        return len(self.centroids)

    def trajectory(self, index: int) -> Trajectory:
        return Trajectory(self.centroids[index].copy(), dt=self.dt)


@dataclass(slots=True, eq=False)
class ForecastRecord:
    ctx: SceneContext
    ground_truth: Trajectory
    candidates: list[Trajectory]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ContractError("forecast record needs at least one candidate")
        horizon = self.ground_truth.horizon
        if any(c.horizon != horizon for c in self.candidates):
            raise ContractError("candidates must share the ground-truth horizon")


@dataclass(slots=True)
class ResultRow:
    """One (method, suite) cell of the evaluation matrix."""

    method: str
    suite: str
    trials: int
    success_rate: float
    success_se: float
    infractions_per_km: float
    infra_se: float
    detection_auroc: float | None
    detection_corr: float | None
    recovery_score: float | None
    mean_min_ade1: float | None = None
    mean_min_ade5: float | None = None
    mean_min_fde1: float | None = None


@dataclass(slots=True, eq=False)
class Demonstration:
    """One expert decision point: observation and the expert's T-step plan."""

    scene_id: str
    step: int
    ctx: SceneContext
    plan: Trajectory

    def as_record(self) -> tuple[SceneContext, Trajectory]:
        return self.ctx, self.plan
