"""Plan selection under an aggregated imitation prior plus a goal likelihood.

    value(y) = AGG_k log q(y | x; theta_k) + log N(y_T; g, eps^2 I)

The aggregator decides how the ensemble members' opinions are combined:
worst case (WCM), weighted mean (MA), best case (BCM), a single member,
the lower CVaR tail or mean minus variance.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .config import PlannerConfig
from .density import context_features, log_prob_graph, mean_trajectory, sample_batch
from .diffmath import AdamState, Tape, adam_step
from .ensemble import EnsemblePosterior, member_log_probs_batch, weighted_variance
from .errors import ContractError, NumericalDomainError, PlanningError
from .types import GoalSpec, PlanDiagnostics, SceneContext, Trajectory, TrajectoryLibrary

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class AggregatorKind(str, enum.Enum):
    WCM = "wcm"
    MA = "ma"
    BCM = "bcm"
    SAMPLE = "sample"
    CVAR = "cvar"
    MEAN_VARIANCE = "mv"


@dataclass(frozen=True, slots=True)
class Aggregator:
    kind: AggregatorKind
    index: int = 0  # SampleK
    alpha: float = 1.0  # CVaR tail fraction
    lam: float = 0.0  # MeanVariance penalty

    def __post_init__(self) -> None:
        if self.kind is AggregatorKind.CVAR and not 0.0 < self.alpha <= 1.0:
            raise ContractError("CVaR alpha must lie in (0, 1]")
        if self.kind is AggregatorKind.MEAN_VARIANCE and self.lam < 0:
            raise ContractError("mean-variance lambda must be >= 0")
        if self.index < 0:
            raise ContractError("sample index must be >= 0")

    @classmethod
    def wcm(cls) -> Aggregator:
        return cls(AggregatorKind.WCM)

    @classmethod
    def ma(cls) -> Aggregator:
        return cls(AggregatorKind.MA)

    @classmethod
    def bcm(cls) -> Aggregator:
        return cls(AggregatorKind.BCM)

    @classmethod
    def sample(cls, index: int = 0) -> Aggregator:
        return cls(AggregatorKind.SAMPLE, index=index)

    @classmethod
    def cvar(cls, alpha: float) -> Aggregator:
        return cls(AggregatorKind.CVAR, alpha=alpha)

    @classmethod
    def mean_variance(cls, lam: float) -> Aggregator:
        return cls(AggregatorKind.MEAN_VARIANCE, lam=lam)

    @classmethod
    def parse(cls, text: str) -> Aggregator:
        """Parse 'wcm', 'ma', 'bcm', 'sample:K', 'cvar:ALPHA' or 'mv:LAMBDA'."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            kind = AggregatorKind(name)
        except ValueError:
            raise ContractError(f"unknown aggregator '{text}'") from None
        try:
            if kind is AggregatorKind.SAMPLE:
                return cls.sample(int(arg) if arg else 0)
            if kind is AggregatorKind.CVAR:
                return cls.cvar(float(arg) if arg else 0.5)
            if kind is AggregatorKind.MEAN_VARIANCE:
                return cls.mean_variance(float(arg) if arg else 1.0)
        except ValueError as exc:
            if isinstance(exc, ContractError):
                raise
            raise ContractError(f"bad aggregator argument in '{text}'") from exc
        if arg:
            raise ContractError(f"aggregator '{name}' takes no argument")
        return cls(kind)

    def __str__(self) -> str:
        if self.kind is AggregatorKind.SAMPLE:
            return f"sample:{self.index}"
        if self.kind is AggregatorKind.CVAR:
            return f"cvar:{self.alpha:g}"
        if self.kind is AggregatorKind.MEAN_VARIANCE:
            return f"mv:{self.lam:g}"
        return self.kind.value

    def check_members(self, k: int) -> None:
        if self.kind is AggregatorKind.SAMPLE and self.index >= k:
            raise ContractError(f"sample index {self.index} out of range for K={k}")


def _check_scores(member_log_probs, weights, agg: Aggregator) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(member_log_probs, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(values) == 0 or len(values) != len(weights):
        raise ContractError(
            f"{len(values)} member scores but {len(weights)} weights"
        )
    agg.check_members(len(values))
    return values, weights


def _tail_size(alpha: float, k: int) -> int:
    return max(1, math.ceil(alpha * k - 1e-12))


def aggregate(member_log_probs, weights, agg: Aggregator) -> float:
    values, weights = _check_scores(member_log_probs, weights, agg)
    kind = agg.kind
    if kind is AggregatorKind.WCM:
        return float(values.min())
    if kind is AggregatorKind.BCM:
        return float(values.max())
    if kind is AggregatorKind.SAMPLE:
        return float(values[agg.index])
    if kind is AggregatorKind.CVAR:
        tail = np.sort(values)[: _tail_size(agg.alpha, len(values))]
        return math.fsum(tail) / len(tail)
    if kind is AggregatorKind.MEAN_VARIANCE:
        mean = math.fsum(weights * values) / math.fsum(weights)
        return mean - agg.lam * weighted_variance(values, weights)
    total = math.fsum(weights * values)
    if math.isclose(math.fsum(weights), 1.0, abs_tol=1e-12):
        # a convex combination cannot leave [min, max]; keep rounding from doing so
        total = min(max(total, float(values.min())), float(values.max()))
    return total


def aggregate_coefficients(member_log_probs, weights, agg: Aggregator) -> np.ndarray:
    """d aggregate / d log q_k, using the lowest-index active member at ties."""
    values, weights = _check_scores(member_log_probs, weights, agg)
    coeffs = np.zeros(len(values))
    kind = agg.kind
    if kind is AggregatorKind.WCM:
        coeffs[int(np.argmin(values))] = 1.0
    elif kind is AggregatorKind.BCM:
        coeffs[int(np.argmax(values))] = 1.0
    elif kind is AggregatorKind.SAMPLE:
        coeffs[agg.index] = 1.0
    elif kind is AggregatorKind.CVAR:
        m = _tail_size(agg.alpha, len(values))
        coeffs[np.argsort(values, kind="stable")[:m]] = 1.0 / m
    elif kind is AggregatorKind.MEAN_VARIANCE:
        total = weights.sum()
        mean = float(weights @ values) / total
        coeffs = weights / total - agg.lam * 2.0 * weights * (values - mean) / total
    else:
        coeffs = weights.copy()
    return coeffs


def goal_log_prob(endpoint: np.ndarray, goal: GoalSpec | None) -> float:
    if goal is None:
        return 0.0
    eps_sq = goal.tolerance_epsilon**2
    d = np.asarray(endpoint, dtype=np.float64) - goal.goal_position
    return -LOG_2PI - math.log(eps_sq) - float(d @ d) / (2.0 * eps_sq)


@dataclass(slots=True, eq=False)
class ObjectiveResult:
    value: float
    gradient: np.ndarray  # (T, 2)
    member_log_probs: np.ndarray
    aggregate_value: float
    goal_log_prob: float


def objective(
    y: Trajectory,
    ctx: SceneContext,
    posterior: EnsemblePosterior,
    goal: GoalSpec | None,
    agg: Aggregator,
) -> ObjectiveResult:
    """Objective value and its gradient w.r.t. the plan coordinates.

    goal=None drops the goal term (open-loop forecasting).
    """
    arch = posterior.arch
    if y.horizon != arch.horizon:
        raise ContractError(f"plan horizon {y.horizon} != model horizon {arch.horizon}")
    features = context_features([ctx], arch)
    tape = Tape()
    plan = tape.leaf(y.states[None])
    per_member = [log_prob_graph(tape, m, features, plan) for m in posterior.members]
    lps = np.array([float(v.value[0]) for v in per_member])
    coeffs = aggregate_coefficients(lps, posterior.weights, agg)

    total = None
    for c, lp in zip(coeffs, per_member):
        if c == 0.0:
            continue
        term = dm.sum(lp) * float(c)
        total = term if total is None else total + term
    gradient = np.zeros_like(y.states)
    if total is not None:
        gradient = tape.backward(total)[plan][0].copy()

    goal_lp = goal_log_prob(y.endpoint, goal)
    if goal is not None:
        gradient[-1] -= (y.endpoint - goal.goal_position) / goal.tolerance_epsilon**2
    agg_value = aggregate(lps, posterior.weights, agg)
    value = agg_value + goal_lp
    if not math.isfinite(value) or not np.all(np.isfinite(gradient)):
        raise NumericalDomainError("objective")
    return ObjectiveResult(value, gradient, lps, agg_value, goal_lp)


def score_plans(
    ys: np.ndarray,
    ctx: SceneContext,
    posterior: EnsemblePosterior,
    goal: GoalSpec | None,
    agg: Aggregator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Objective values without gradients.

    Returns (values (B,), member log-probs (B, K), goal log-probs (B,)).
    """
    ys = np.asarray(ys, dtype=np.float64)
    lps = member_log_probs_batch(ys, ctx, posterior)
    goal_lps = np.array([goal_log_prob(y[-1], goal) for y in ys])
    values = np.array([aggregate(row, posterior.weights, agg) for row in lps]) + goal_lps
    return values, lps, goal_lps


def diagnose(
    plan: Trajectory,
    member_lps: np.ndarray,
    goal_lp: float,
    posterior: EnsemblePosterior,
    agg: Aggregator,
    iterations: int = 0,
) -> PlanDiagnostics:
    return PlanDiagnostics(
        plan=plan,
        member_log_probs=np.asarray(member_lps, dtype=np.float64).copy(),
        aggregate_value=aggregate(member_lps, posterior.weights, agg),
        goal_log_prob=goal_lp,
        epistemic_variance=weighted_variance(member_lps, posterior.weights),
        iterations_used=iterations,
    )


def plan_gradient(
    ctx: SceneContext,
    posterior: EnsemblePosterior,
    goal: GoalSpec | None,
    agg: Aggregator,
    init: Trajectory,
    max_iters: int = 100,
    rng_seed: int = 0,
    learning_rate: float = 0.1,
    init_noise: float = 0.0,
) -> PlanDiagnostics:
    """Adam ascent on the plan coordinates; returns the best iterate seen."""
    if max_iters < 0:
        raise ContractError("max_iters must be >= 0")
    states = init.states.copy()
    if init_noise > 0:
        states = states + np.random.default_rng(rng_seed).normal(0.0, init_noise, states.shape)
    state = AdamState.zeros(states.size, learning_rate=learning_rate)

    best: ObjectiveResult | None = None
    best_states = states
    best_iter = 0
    for it in range(max_iters + 1):
        try:
            result = objective(Trajectory(states, dt=init.dt), ctx, posterior, goal, agg)
        except NumericalDomainError as exc:
            logger.debug("planner iterate %d non-finite (%s), stopping", it, exc.primitive)
            break
        if best is None or result.value > best.value:
            best, best_states, best_iter = result, states.copy(), it
        if it == max_iters:
            break
        flat, state = adam_step(states.reshape(-1), result.gradient.reshape(-1), state, minimize=False)
        states = flat.reshape(states.shape)

    if best is None:
        raise PlanningError("every planner iterate was non-finite")
    logger.debug("planner best value %.4f at iterate %d/%d", best.value, best_iter, max_iters)
    return diagnose(
        Trajectory(best_states, dt=init.dt),
        best.member_log_probs,
        best.goal_log_prob,
        posterior,
        agg,
        iterations=best_iter,
    )


def plan_library(
    ctx: SceneContext,
    posterior: EnsemblePosterior,
    goal: GoalSpec | None,
    agg: Aggregator,
    library: TrajectoryLibrary,
) -> PlanDiagnostics:
    """Exhaustive argmax over the library centroids, lowest index on ties."""
    if library.centroids.shape[1] != posterior.arch.horizon:
        raise ContractError("library horizon does not match the model horizon")
    values, lps, goal_lps = score_plans(library.centroids, ctx, posterior, goal, agg)
    finite = np.where(np.isfinite(values), values, -np.inf)
    if not np.any(np.isfinite(finite)):
        raise PlanningError("no library centroid has a finite objective")
    best = int(np.argmax(finite))
    return diagnose(library.trajectory(best), lps[best], float(goal_lps[best]), posterior, agg)


def plan_candidates(
    ctx: SceneContext,
    posterior: EnsemblePosterior,
    agg: Aggregator,
    num_candidates: int = 50,
    rng_seed: int = 0,
    refine_iters: int = 0,
    learning_rate: float = 0.1,
) -> list[PlanDiagnostics]:
    """Draw candidates from the members in turn and rank them by the aggregate.

    Candidate i comes from member i mod K. With refine_iters > 0 each candidate
    is first pushed uphill on the aggregated imitation prior. Ranking is by
    descending aggregate value, stable in candidate order.
    """
    if num_candidates < 1:
        raise ContractError("num_candidates must be >= 1")
    k = len(posterior)
    rng = np.random.default_rng(rng_seed)
    draws = [
        sample_batch(ctx, member, len(range(idx, num_candidates, k)), rng)
        if idx < num_candidates
        else None
        for idx, member in enumerate(posterior.members)
    ]
    ys = np.stack([draws[i % k][i // k] for i in range(num_candidates)])
    dt = posterior.arch.dt

    if refine_iters > 0:
        diagnostics = [
            plan_gradient(
                ctx, posterior, None, agg, Trajectory(y, dt=dt),
                max_iters=refine_iters, learning_rate=learning_rate,
            )
            for y in ys
        ]
    else:
        _, lps, _ = score_plans(ys, ctx, posterior, None, agg)
        diagnostics = [
            diagnose(Trajectory(y, dt=dt), row, 0.0, posterior, agg) for y, row in zip(ys, lps)
        ]
    order = sorted(range(num_candidates), key=lambda i: -diagnostics[i].aggregate_value)
    return [diagnostics[i] for i in order]


class RipPolicy:
    """Closed-loop planner: initialize, then ascend the objective.

    The initialization is the best library centroid when a library is given,
    otherwise the mean rollout of the first member.
    """

    def __init__(
        self,
        posterior: EnsemblePosterior,
        aggregator: Aggregator,
        config: PlannerConfig | None = None,
        library: TrajectoryLibrary | None = None,
        init_noise: float = 0.0,
    ):
        self.posterior = posterior
        self.aggregator = aggregator
        self.config = config or PlannerConfig()
        self.library = library
        self.init_noise = init_noise

    def initial_plan(self, ctx: SceneContext, goal: GoalSpec) -> PlanDiagnostics | Trajectory:
        if self.library is not None:
            return plan_library(ctx, self.posterior, goal, self.aggregator, self.library)
        return mean_trajectory(ctx, self.posterior.members[0])

    def plan_context(self, ctx: SceneContext, rng_seed: int = 0) -> PlanDiagnostics:
        goal = GoalSpec(ctx.goal, self.config.epsilon)
        init = self.initial_plan(ctx, goal)
        if isinstance(init, PlanDiagnostics):
            init = init.plan
        return plan_gradient(
            ctx,
            self.posterior,
            goal,
            self.aggregator,
            init,
            max_iters=self.config.max_iters,
            rng_seed=rng_seed,
            learning_rate=self.config.learning_rate,
            init_noise=self.init_noise,
        )

    def plan(self, ctx: SceneContext, scene=None, state=None, rng_seed: int = 0) -> PlanDiagnostics:
        return self.plan_context(ctx, rng_seed)