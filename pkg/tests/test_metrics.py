import math

import numpy as np
import pytest

from rip_planner import (
    ContractError,
    InfractionKind,
    Trajectory,
    UndefinedScoreError,
    ade,
    adaptation_score,
    bootstrap_se,
    detection_score,
    infractions_per_km,
    min_ade_k,
    min_fde,
    recovery_score,
    sign_test,
)
from rip_planner.metrics import (
    auroc_and_correlation,
    bootstrap_ratio_se,
    detection_windows,
    min_fde_k,
    separation_auroc,
)

from tests.conftest import make_log


def _line(offset: float, horizon: int = 4) -> Trajectory:
    return Trajectory(np.column_stack([np.arange(1.0, horizon + 1), np.full(horizon, offset)]))


def test_ade_examples():
    assert ade(_line(0.0), _line(0.0)) == 0.0
    assert ade(_line(1.0), _line(0.0)) == pytest.approx(1.0)
    shifted = Trajectory(_line(0.0).states + np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0], [0.0, 4.0]]))
    assert ade(shifted, _line(0.0)) == pytest.approx(2.5)
    with pytest.raises(ContractError):
        ade(_line(0.0, 4), _line(0.0, 5))


def test_min_ade_k_takes_the_best_prefix_candidate():
    candidates = [_line(2.0), _line(0.5), _line(0.1)]
    assert min_ade_k(candidates, _line(0.0), 2) == pytest.approx(0.5)
    values = [min_ade_k(candidates, _line(0.0), k) for k in (1, 2, 3)]
    assert values == sorted(values, reverse=True)
    with pytest.raises(ContractError):
        min_ade_k(candidates, _line(0.0), 0)
    with pytest.raises(ContractError):
        min_ade_k(candidates, _line(0.0), 4)


def test_min_fde_uses_the_terminal_state():
    target = _line(0.0)
    states = target.states.copy()
    states[-1] += [3.0, 4.0]
    moved = Trajectory(states)
    assert min_fde(moved, target) == pytest.approx(5.0)
    assert min_fde_k([moved, target], target, 2) == 0.0


def test_perfect_ranking_scores_one():
    auroc, corr = auroc_and_correlation(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1]))
    assert auroc == 1.0
    assert corr > 0.9


def test_constant_feature_is_uninformative():
    auroc, corr = auroc_and_correlation(np.full(4, 0.3), np.array([0, 1, 0, 1]))
    assert auroc == 0.5
    assert corr == 0.0


def test_detection_hand_case():
    logs = [
        make_log([0.8] * 16, InfractionKind.OFF_LANE, scene_id="a"),
        make_log([0.1] * 16, scene_id="b"),
        make_log([0.3] * 16, scene_id="c"),
    ]
    features, labels = detection_windows(logs)
    assert sorted(zip(labels.tolist(), features.tolist())) == [(0, 0.1), (0, 0.3), (1, 0.8)]
    auroc, _ = detection_score(logs)
    assert auroc == 1.0


def test_positive_windows_may_be_short_and_clean_windows_skip_them():
    trace = [0.0] * 39 + [1.0]
    log = make_log(trace, InfractionKind.COLLISION)
    features, labels = detection_windows([log], width=16, stride=4)
    assert labels.tolist().count(1) == 1
    assert features[labels == 1][0] == 1.0
    # the positive window covers steps 24..39, so clean windows ending at 15, 19 and 23 survive
    assert labels.tolist().count(0) == 3

    short = make_log([0.2, 0.7], InfractionKind.OFF_LANE)
    features, labels = detection_windows([short])
    assert features.tolist() == [0.7]
    assert labels.tolist() == [1]


def test_timeouts_do_not_label_windows():
    logs = [make_log([0.9] * 16, InfractionKind.TIMEOUT), make_log([0.1] * 16)]
    _, labels = detection_windows(logs)
    assert labels.tolist() == [0, 0]
    with pytest.raises(UndefinedScoreError):
        detection_score(logs)


def test_nll_feature_reads_the_nll_trace():
    logs = [make_log([0.8] * 16, InfractionKind.OFF_LANE), make_log([0.1] * 16)]
    features, labels = detection_windows(logs, feature="nll")
    assert features[labels == 1][0] == pytest.approx(-0.8)
    with pytest.raises(ContractError):
        detection_windows(logs, feature="entropy")


def test_separation_auroc():
    assert separation_auroc([0.1, 0.2], [0.5, 0.9]) == 1.0
    assert separation_auroc([0.5, 0.9], [0.1, 0.2]) == 0.0


def _outcomes(successes, prefix="s"):
    logs = []
    for i, ok in enumerate(successes):
        logs.append(make_log([0.0], None if ok else InfractionKind.COLLISION, scene_id=f"{prefix}{i}"))
    return logs


def test_recovery_examples():
    baseline = _outcomes([False, False, False, True])
    assert recovery_score(_outcomes([True, True, True, True]), baseline) == 1.0
    assert recovery_score(_outcomes([False, False, False, True]), baseline) == 0.0
    assert recovery_score(_outcomes([True, False, True, False]), baseline) == pytest.approx(2 / 3)


def test_recovery_undefined_when_the_baseline_never_fails():
    assert recovery_score(_outcomes([False]), _outcomes([True])) is None


def test_recovery_requires_matching_episodes():
    with pytest.raises(ContractError):
        recovery_score(_outcomes([True], prefix="x"), _outcomes([False]))


def test_infractions_per_km():
    assert infractions_per_km([make_log([0.0] * 4, distance=250.0)]) == 0.0
    two = make_log([0.0] * 4, InfractionKind.OFF_LANE, distance=500.0)
    two.infractions.append(two.infractions[0])
    assert infractions_per_km([two]) == pytest.approx(4.0)
    pooled = [make_log([0.0], InfractionKind.COLLISION, distance=250.0), make_log([0.0], distance=750.0)]
    assert infractions_per_km(pooled) == pytest.approx(1.0)
    timeout = make_log([0.0], InfractionKind.TIMEOUT, distance=1000.0)
    assert infractions_per_km([timeout]) == 0.0
    with pytest.raises(ContractError):
        infractions_per_km([make_log([0.0], distance=0.0)])


def test_bootstrap_se():
    assert bootstrap_se([3.0] * 10) == 0.0
    spread = bootstrap_se([0.0, 1.0] * 50, resamples=2000, rng_seed=1)
    assert spread == pytest.approx(0.05, rel=0.15)
    assert bootstrap_se([0.0, 1.0] * 50, rng_seed=4) == bootstrap_se([0.0, 1.0] * 50, rng_seed=4)
    with pytest.raises(ContractError):
        bootstrap_se([])


def test_bootstrap_ratio_se():
    assert bootstrap_ratio_se([1.0, 1.0], [2.0, 2.0]) == 0.0
    assert math.isnan(bootstrap_ratio_se([0.0], [0.0]))
    with pytest.raises(ContractError):
        bootstrap_ratio_se([1.0], [1.0, 2.0])


def test_sign_test():
    assert sign_test([True] * 3, [True] * 3) == 1.0
    assert sign_test([True] * 10, [False] * 10) == pytest.approx(0.5**10)
    assert sign_test([False] * 5, [True] * 5) == 1.0
    with pytest.raises(ContractError):
        sign_test([True], [])


def test_adaptation_score_is_the_fitted_slope():
    assert adaptation_score([0, 10, 20], [0.5, 0.6, 0.7]) == pytest.approx(0.01)
    assert adaptation_score([0, 5], [0.4, 0.4]) == pytest.approx(0.0)
    with pytest.raises(ContractError):
        adaptation_score([3, 3], [0.1, 0.2])


def test_min_ade_is_monotone_over_random_records():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        truth = rng.normal(size=(4, 2))
        candidates = list(rng.normal(size=(5, 4, 2)))
        assert min_ade_k(candidates, truth, 1) == ade(candidates[0], truth)
        values = [min_ade_k(candidates, truth, k) for k in range(1, 6)]
        assert all(b <= a for a, b in zip(values, values[1:]))
