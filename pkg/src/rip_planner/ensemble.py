"""Bootstrap ensemble of density models approximating the model posterior."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import TrainingConfig
from .density import Architecture, DensityModel, Record, log_prob_batch, train_with_config
from .errors import ContractError, TrainingError
from .types import SceneContext, Trajectory

logger = logging.getLogger(__name__)


@dataclass(slots=True, eq=False)
class EnsemblePosterior:
    """K density models with non-negative weights summing to one."""

    members: list[DensityModel]
    weights: np.ndarray

    def __post_init__(self) -> None:
        if not self.members:
            raise ContractError("an ensemble needs at least one member")
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(self.weights) != len(self.members):
            raise ContractError("one weight per member required")
        if np.any(self.weights < 0) or not math.isclose(math.fsum(self.weights), 1.0, abs_tol=1e-9):
            raise ContractError("weights must be non-negative and sum to 1")
        arch = self.members[0].arch
        if any(m.arch != arch for m in self.members[1:]):
            raise ContractError("members must share one architecture")

    @classmethod
    def uniform(cls, members: Sequence[DensityModel]) -> EnsemblePosterior:
        members = list(members)
        return cls(members, np.full(len(members), 1.0 / max(len(members), 1)))

    @property
    def arch(self) -> Architecture:
        return self.members[0].arch

    def __len__(self) -> int:
        return len(self.members)

    def subset(self, indices: Sequence[int]) -> EnsemblePosterior:
        """Posterior over the chosen members, renormalized."""
        indices = list(indices)
        if not indices or any(i < 0 or i >= len(self) for i in indices):
            raise ContractError(f"invalid member indices {indices} for K={len(self)}")
        weights = self.weights[indices]
        total = weights.sum()
        weights = weights / total if total > 0 else np.full(len(indices), 1.0 / len(indices))
        return EnsemblePosterior([self.members[i] for i in indices], weights)

    def with_members(self, members: Sequence[DensityModel]) -> EnsemblePosterior:
        """Same weights, replaced member models."""
        return EnsemblePosterior(list(members), self.weights.copy())


def bootstrap_split(data: Sequence[Record], k: int, rng_seed: int) -> list[list[Record]]:
    """K with-replacement resamples of size |data|."""
    if not data:
        raise ContractError("bootstrap_split needs data")
    if k < 1:
        raise ContractError("K must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n = len(data)
    return [[data[i] for i in rng.integers(0, n, size=n)] for _ in range(k)]


def train_ensemble(
    data: Sequence[Record],
    k: int,
    arch: Architecture,
    epochs: int = 20,
    rng_seed: int = 0,
    config: TrainingConfig | None = None,
    progress: bool = False,
) -> EnsemblePosterior:
    """Train K members independently, each from its own child seed stream.

    Members are trained one after another; each depends only on its own child
    seeds, so the result matches any parallel schedule.
    """
    if not data:
        raise ContractError("train_ensemble needs data")
    if k < 1:
        raise ContractError("K must be >= 1")
    config = config or TrainingConfig(epochs=epochs)
    children = np.random.SeedSequence(rng_seed).spawn(k)
    seeds = [int(child.generate_state(1)[0]) for child in children]
    init_seeds = seeds if config.distinct_init else [seeds[0]] * k
    if config.bootstrap:
        datasets = [
            bootstrap_split(data, 1, int(child.generate_state(2)[1]))[0] for child in children
        ]
    else:
        datasets = [list(data)] * k

    indices = range(k)
    if progress:
        from tqdm import tqdm

        indices = tqdm(indices, desc="members", unit="model")
    members = []
    for idx in indices:
        logger.info("training member %d/%d on %d records", idx + 1, k, len(datasets[idx]))
        try:
            member = train_with_config(datasets[idx], arch, config, seeds[idx], init_seeds[idx])
        except TrainingError as exc:
            raise TrainingError(exc.epoch, member=idx, detail=str(exc)) from exc
        members.append(member.with_params(member.params, member_index=idx))
    return EnsemblePosterior.uniform(members)


def member_log_probs_batch(
    ys: np.ndarray, ctx: SceneContext, posterior: EnsemblePosterior
) -> np.ndarray:
    """log q_k for B plans under every member, shape (B, K)."""
    return np.column_stack([log_prob_batch(ys, ctx, m) for m in posterior.members])


def member_log_probs(y: Trajectory, ctx: SceneContext, posterior: EnsemblePosterior) -> np.ndarray:
    return member_log_probs_batch(y.states[None], ctx, posterior)[0]


def weighted_variance(values: np.ndarray, weights: np.ndarray) -> float:
    """Population variance under the weights; exactly 0 when all values agree."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if len(values) != len(weights):
        raise ContractError("values and weights lengths differ")
    if np.ptp(values) == 0.0:
        return 0.0
    total = math.fsum(weights)
    mean = math.fsum(weights * values) / total
    return max(math.fsum(weights * (values - mean) ** 2) / total, 0.0)


def epistemic_variance(y: Trajectory, ctx: SceneContext, posterior: EnsemblePosterior) -> float:
    """Variance of log q(y|x; theta) over the posterior."""
    return weighted_variance(member_log_probs(y, ctx, posterior), posterior.weights)
