import math

import pytest

from rip_planner import (
    Aggregator,
    Architecture,
    ContractError,
    InfractionKind,
    MethodSpec,
    PlannerConfig,
    evaluate_forecasts,
    run_matrix,
)
from rip_planner.bench import DEFAULT_METHODS, perturb_start, run_trials, summarize

from tests.conftest import make_log, make_posterior, make_records, make_straight_scene, make_world

PLANNER = PlannerConfig(max_iters=1)


@pytest.fixture
def world():
    return make_world(max_steps=8)


@pytest.fixture
def tiny_posterior(world):
    return make_posterior(Architecture.from_world(world, hidden_size=4), k=2)


def test_method_names_parse():
    dim = MethodSpec.parse("dim")
    assert dim.single_model
    assert dim.aggregator == Aggregator.sample(0)
    assert MethodSpec.parse("RIP-WCM").aggregator == Aggregator.wcm()
    assert MethodSpec.parse("rip-cvar").aggregator == Aggregator.cvar(0.5)
    assert MethodSpec.parse("rip-mv:2").aggregator == Aggregator.mean_variance(2.0)
    assert all(MethodSpec.parse(name).name == name for name in DEFAULT_METHODS)
    for bad in ("foo", "rip-", "rip-median"):
        with pytest.raises(ContractError):
            MethodSpec.parse(bad)


def test_single_model_methods_use_the_first_member(posterior):
    spec = MethodSpec.parse("dim")
    assert len(spec.posterior(posterior)) == 1
    assert spec.posterior(posterior).members[0] is posterior.members[0]
    assert MethodSpec.parse("rip-ma").posterior(posterior) is posterior


def test_perturbed_start_is_seeded_and_lateral(straight_scene):
    a = perturb_start(straight_scene, 7)
    b = perturb_start(straight_scene, 7)
    assert a.start == b.start
    assert a.start.x == pytest.approx(straight_scene.start.x)
    assert abs(a.start.y - straight_scene.start.y) <= 0.5
    assert abs(a.start.heading) <= 0.05
    assert a.start.speed == straight_scene.start.speed
    assert a.road_map is straight_scene.road_map


def test_forecast_evaluation(arch, posterior):
    records = make_records(arch, 4, seed=2)
    summary = evaluate_forecasts(records, posterior, Aggregator.wcm(), num_candidates=6, rng_seed=1)
    assert len(summary.records) == 4
    assert all(len(r.candidates) == 6 for r in summary.records)
    assert summary.mean_min_ade5 <= summary.mean_min_ade1
    again = evaluate_forecasts(records, posterior, Aggregator.wcm(), num_candidates=6, rng_seed=1)
    assert again.mean_min_ade1 == summary.mean_min_ade1
    assert again.mean_min_fde1 == summary.mean_min_fde1
    with pytest.raises(ContractError):
        evaluate_forecasts([], posterior, Aggregator.wcm())


def test_methods_share_start_perturbations(world, tiny_posterior):
    scenes = [make_straight_scene()]
    wcm = run_trials(scenes, MethodSpec.parse("rip-wcm"), tiny_posterior, 2, 9, PLANNER, world)
    dim = run_trials(scenes, MethodSpec.parse("dim"), tiny_posterior, 2, 9, PLANNER, world)
    assert len(wcm) == len(dim) == 2
    assert [log.states[0] for log in wcm] == [log.states[0] for log in dim]
    assert wcm[0].states[0] != wcm[1].states[0]
    single = run_trials(scenes, MethodSpec.parse("dim"), tiny_posterior, 1, 9, PLANNER, world)
    assert single[0].states[0] == scenes[0].start


def test_summary_row():
    logs = [make_log([0.1] * 16, distance=100.0), make_log([0.9] * 16, InfractionKind.OFF_LANE, distance=100.0)]
    row = summarize("rip-wcm", "abnormal", logs, None)
    assert row.trials == 2
    assert row.success_rate == 0.5
    assert row.infractions_per_km == pytest.approx(5.0)
    assert row.detection_auroc == 1.0
    assert row.recovery_score is None

    clean = summarize("dim", "abnormal", [make_log([0.1] * 16, distance=0.0)], None)
    assert math.isnan(clean.infractions_per_km)
    assert clean.detection_auroc is None
    assert clean.success_se == 0.0


def test_matrix_is_reproducible(world, tiny_posterior):
    suites = {"straight": [make_straight_scene(), make_straight_scene(lateral=0.5)]}
    kwargs = dict(
        trials=2, rng_seed=3, posterior=tiny_posterior, planner_config=PLANNER, world_config=world,
        forecast_records=3, forecast_candidates=4,
    )
    rows, logs = run_matrix(["rip-wcm", "dim"], suites, **kwargs)
    again, _ = run_matrix(["rip-wcm", "dim"], suites, **kwargs)
    assert [r.method for r in rows] == ["rip-wcm", "dim"]
    assert [repr(r) for r in rows] == [repr(r) for r in again]
    assert set(logs) == {("rip-wcm", "straight"), ("dim", "straight")}
    assert all(r.trials == 4 for r in rows)
    assert all(r.mean_min_ade1 is not None for r in rows)


def test_matrix_runs_the_baseline_for_recovery(world, tiny_posterior):
    suites = {"straight": [make_straight_scene()]}
    rows, logs = run_matrix(
        ["rip-ma"], suites, trials=1, rng_seed=0, posterior=tiny_posterior,
        planner_config=PLANNER, world_config=world, forecast_records=0,
    )
    assert set(logs) == {("rip-ma", "straight")}
    (row,) = rows
    # eight steps never reach the goal, so the baseline fails every episode
    assert row.success_rate == 0.0
    assert row.recovery_score == 0.0
    assert row.mean_min_ade1 is None
    with pytest.raises(ContractError):
        run_matrix([], suites, 1, 0, tiny_posterior)
    with pytest.raises(ContractError):
        run_matrix(["dim"], suites, 0, 0, tiny_posterior)


def test_member_index_beyond_the_ensemble_is_rejected_before_any_episode(world, tiny_posterior):
    suites = {"straight": [make_straight_scene()]}
    with pytest.raises(ContractError, match="out of range"):
        run_matrix(["rip-wcm", "rip-sample:7"], suites, 1, 0, tiny_posterior, PLANNER, world, forecast_records=0)
    with pytest.raises(ContractError):
        MethodSpec.parse("rip-sample:2").posterior(tiny_posterior)
    assert len(MethodSpec.parse("rip-sample:1").posterior(tiny_posterior)) == 2


def test_planner_epsilon_is_the_goal_reach_tolerance(world, tiny_posterior):
    # the goal sits 55 m down the road, so only a 100 m tolerance ends the first step with a success
    scenes = [make_straight_scene()]
    near = run_trials(scenes, MethodSpec.parse("dim"), tiny_posterior, 1, 0, PlannerConfig(max_iters=1), world)
    far = run_trials(
        scenes, MethodSpec.parse("dim"), tiny_posterior, 1, 0, PlannerConfig(max_iters=1, epsilon=100.0), world
    )
    assert not near[0].success
    assert far[0].success
    assert len(far[0].states) == 2
