"""Forecasting, detection and driving metrics."""

from __future__ import annotations

import logging
import math
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.stats import binomtest, pearsonr
from sklearn.metrics import roc_auc_score

from .errors import ContractError, UndefinedScoreError
from .types import EpisodeLog, InfractionKind, Trajectory

logger = logging.getLogger(__name__)

WINDOW = 16  # 4 s at dt = 0.25
STRIDE = 4
DETECTED_KINDS = (InfractionKind.OFF_LANE, InfractionKind.COLLISION)

Feature = Literal["variance", "nll"]


def _states(y: Trajectory | np.ndarray) -> np.ndarray:
    return y.states if isinstance(y, Trajectory) else np.asarray(y, dtype=np.float64)


def ade(y: Trajectory | np.ndarray, y_star: Trajectory | np.ndarray) -> float:
    a, b = _states(y), _states(y_star)
    if a.shape != b.shape:
        raise ContractError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def min_ade_k(candidates: Sequence[Trajectory | np.ndarray], y_star, k: int) -> float:
    """Best ADE among the first k candidates."""
    if k < 1 or k > len(candidates):
        raise ContractError(f"k must lie in [1, {len(candidates)}], got {k}")
    return min(ade(c, y_star) for c in candidates[:k])


def min_fde(y: Trajectory | np.ndarray, y_star: Trajectory | np.ndarray) -> float:
    """Terminal displacement."""
    a, b = _states(y), _states(y_star)
    if a.shape != b.shape:
        raise ContractError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a[-1] - b[-1]))


def min_fde_k(candidates: Sequence[Trajectory | np.ndarray], y_star, k: int) -> float:
    if k < 1 or k > len(candidates):
        raise ContractError(f"k must lie in [1, {len(candidates)}], got {k}")
    return min(min_fde(c, y_star) for c in candidates[:k])


def _trace(log: EpisodeLog, feature: Feature) -> np.ndarray:
    if feature == "variance":
        return np.asarray(log.uncertainty_trace, dtype=np.float64)
    if feature == "nll":
        return np.asarray(log.nll_trace, dtype=np.float64)
    raise ContractError(f"unknown detection feature '{feature}'")


def _window_max(trace: np.ndarray, start: int, end: int) -> float | None:
    window = trace[start : end + 1]
    window = window[np.isfinite(window)]
    return float(window.max()) if len(window) else None


def detection_windows(
    logs: Iterable[EpisodeLog],
    feature: Feature = "variance",
    width: int = WINDOW,
    stride: int = STRIDE,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-window max of the trace with labels.

    A positive window ends at an OffLane or Collision step. Clean windows of
    full width are taken every stride steps and dropped when they overlap a
    positive window.
    """
    if width < 1 or stride < 1:
        raise ContractError("width and stride must be >= 1")
    features: list[float] = []
    labels: list[int] = []
    for log in logs:
        trace = _trace(log, feature)
        positive_spans = []
        for infraction in log.infractions:
            if infraction.kind not in DETECTED_KINDS or infraction.step >= len(trace):
                continue
            start = max(0, infraction.step - width + 1)
            positive_spans.append((start, infraction.step))
            value = _window_max(trace, start, infraction.step)
            if value is not None:
                features.append(value)
                labels.append(1)
        for end in range(width - 1, len(trace), stride):
            start = end - width + 1
            if any(start <= p_end and p_start <= end for p_start, p_end in positive_spans):
                continue
            value = _window_max(trace, start, end)
            if value is not None:
                features.append(value)
                labels.append(0)
    return np.array(features, dtype=np.float64), np.array(labels, dtype=int)


def auroc_and_correlation(features: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """AUROC of the feature for the positive label and the point-biserial correlation."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if len(np.unique(labels)) < 2:
        raise UndefinedScoreError("detection needs both positive and clean windows")
    auroc = float(roc_auc_score(labels, features))
    if np.ptp(features) == 0.0:
        return auroc, 0.0
    return auroc, float(pearsonr(features, labels.astype(np.float64)).statistic)


def detection_score(
    logs: Iterable[EpisodeLog], feature: Feature = "variance"
) -> tuple[float, float]:
    """(AUROC, point-biserial correlation) of the window feature vs infraction."""
    features, labels = detection_windows(logs, feature)
    return auroc_and_correlation(features, labels)


def separation_auroc(in_distribution: Sequence[float], shifted: Sequence[float]) -> float:
    """AUROC of scores ranking shifted samples above in-distribution ones."""
    scores = np.concatenate([np.asarray(in_distribution, float), np.asarray(shifted, float)])
    labels = np.concatenate([np.zeros(len(in_distribution)), np.ones(len(shifted))])
    return auroc_and_correlation(scores, labels)[0]


def _key(log: EpisodeLog) -> tuple[str, int]:
    return log.scene_id, log.seed


def recovery_score(
    method_logs: Sequence[EpisodeLog], baseline_logs: Sequence[EpisodeLog]
) -> float | None:
    """Fraction of the baseline's failed episodes that the method completed.

    None when the baseline failed nowhere.
    """
    method = {_key(log): log for log in method_logs}
    failed = [_key(log) for log in baseline_logs if not log.success]
    if not failed:
        return None
    missing = [k for k in failed if k not in method]
    if missing:
        raise ContractError(f"method logs lack episodes {missing[:3]}")
    return sum(method[k].success for k in failed) / len(failed)


def count_infractions(log: EpisodeLog) -> int:
    return sum(1 for i in log.infractions if i.kind in DETECTED_KINDS)


def infractions_per_km(logs: Sequence[EpisodeLog]) -> float:
    """OffLane and Collision count over pooled kilometres; Timeout excluded."""
    distance = math.fsum(log.distance_driven for log in logs)
    if distance <= 0:
        raise ContractError("no distance driven")
    return sum(count_infractions(log) for log in logs) / (distance / 1000.0)


def bootstrap_se(values: Sequence[float], resamples: int = 1000, rng_seed: int = 0) -> float:
    """Standard deviation of the resampled mean."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ContractError("bootstrap needs values")
    rng = np.random.default_rng(rng_seed)
    idx = rng.integers(0, len(values), size=(resamples, len(values)))
    return float(np.std(values[idx].mean(axis=1)))


def bootstrap_ratio_se(
    numerators: Sequence[float],
    denominators: Sequence[float],
    resamples: int = 1000,
    rng_seed: int = 0,
    scale: float = 1.0,
) -> float:
    """Standard deviation of scale * sum(num) / sum(den) under episode resampling."""
    num = np.asarray(numerators, dtype=np.float64)
    den = np.asarray(denominators, dtype=np.float64)
    if len(num) == 0 or len(num) != len(den):
        raise ContractError("numerators and denominators must be equal-length and non-empty")
    rng = np.random.default_rng(rng_seed)
    idx = rng.integers(0, len(num), size=(resamples, len(num)))
    totals = den[idx].sum(axis=1)
    keep = totals > 0
    if not np.any(keep):
        return math.nan
    ratios = scale * num[idx].sum(axis=1)[keep] / totals[keep]
    return float(np.std(ratios))


def sign_test(method_success: Sequence[bool], baseline_success: Sequence[bool]) -> float:
    """One-sided paired sign test p-value that the method wins more often."""
    if len(method_success) != len(baseline_success):
        raise ContractError("paired outcomes must have equal length")
    wins = sum(1 for m, b in zip(method_success, baseline_success) if m and not b)
    losses = sum(1 for m, b in zip(method_success, baseline_success) if b and not m)
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)


def adaptation_score(budgets: Sequence[float], success_rates: Sequence[float]) -> float:
    """Least-squares slope of success rate against the demonstration budget."""
    x = np.asarray(budgets, dtype=np.float64)
    y = np.asarray(success_rates, dtype=np.float64)
    if len(x) != len(y) or len(np.unique(x)) < 2:
        raise ContractError("need at least two distinct budgets with one rate each")
    return float(np.polyfit(x, y, 1)[0])
