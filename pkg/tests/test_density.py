import math

import numpy as np
import pytest

from rip_planner import (
    Architecture,
    ContractError,
    DensityModel,
    SceneContext,
    Tape,
    TrainingError,
    Trajectory,
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
from rip_planner import diffmath as dm
from rip_planner.density import context_features, log_prob_graph

from tests.conftest import make_arch, make_context, make_model, make_plan, make_records, numeric_gradient

LOG_2PI = math.log(2.0 * math.pi)


def _softplus_inverse(x: float) -> float:
    return math.log(math.expm1(x))


def _forced_model(arch: Architecture, mean_offset=(0.0, 0.0), l11: float = 1.0, l22: float = 1.0) -> DensityModel:
    """Zero-weight model whose every step has a fixed offset and diagonal scale."""
    model = DensityModel.zeros(arch)
    params = model.params.replace("mean_b", np.array(mean_offset))
    params = params.replace(
        "scale_b",
        np.array([_softplus_inverse(l11 - arch.min_scale), 0.0, _softplus_inverse(l22 - arch.min_scale)]),
    )
    return model.with_params(params)


def test_zero_weight_step_distribution(arch, rng):
    model = DensityModel.zeros(arch)
    emb = encode_context(make_context(arch, rng), model)
    np.testing.assert_array_equal(emb, np.zeros(arch.hidden_size))
    step = step_distribution(emb, np.array([[1.0, 2.0]]), model)
    np.testing.assert_allclose(step.mean, [1.0, 2.0])
    sigma = arch.min_scale + math.log(2.0)
    np.testing.assert_allclose(step.scale_lower @ step.scale_lower.T, sigma**2 * np.eye(2), rtol=1e-12)


def test_step_distribution_rejects_full_prefix(arch):
    model = DensityModel.zeros(arch)
    with pytest.raises(ContractError):
        step_distribution(np.zeros(arch.hidden_size), np.zeros((arch.horizon, 2)), model)
    with pytest.raises(ContractError):
        step_distribution(np.zeros(arch.hidden_size + 1), np.zeros((0, 2)), model)


def test_standard_normal_single_step(rng):
    arch = make_arch(horizon=1)
    model = _forced_model(arch)
    y = Trajectory(np.zeros((1, 2)), dt=arch.dt)
    assert log_prob(y, make_context(arch, rng), model) == pytest.approx(-LOG_2PI, abs=1e-9)
    assert log_prob(y, make_context(arch, rng), model) == pytest.approx(-1.83788, abs=1e-5)


def test_every_step_at_its_mean_adds_up(arch, rng):
    model = _forced_model(arch)
    y = Trajectory(np.zeros((arch.horizon, 2)), dt=arch.dt)
    assert log_prob(y, make_context(arch, rng), model) == pytest.approx(-arch.horizon * LOG_2PI, abs=1e-9)


def test_shifted_mean_and_scaled_axis(rng):
    arch = make_arch(horizon=1)
    model = _forced_model(arch, mean_offset=(1.0, 0.0), l11=2.0)
    y = Trajectory(np.array([[3.0, 0.0]]), dt=arch.dt)
    assert log_prob(y, make_context(arch, rng), model) == pytest.approx(-3.03103, abs=1e-5)


def test_identical_contexts_encode_identically(arch, rng):
    model = make_model(arch, 3)
    ctx = make_context(arch, rng)
    copy = SceneContext(ctx.past.copy(), ctx.scan.copy(), ctx.goal.copy())
    np.testing.assert_array_equal(encode_context(ctx, model), encode_context(copy, model))


def test_context_dimension_mismatch(arch, rng):
    ctx = make_context(make_arch(num_beams=arch.num_beams + 1), rng)
    with pytest.raises(ContractError):
        context_features([ctx], arch)
    with pytest.raises(ContractError):
        log_prob_batch(np.zeros((1, arch.horizon + 1, 2)), make_context(arch, rng), make_model(arch))


def test_log_prob_batch_matches_single(arch, rng):
    model = make_model(arch, 2, scale=2.0)
    ctx = make_context(arch, rng)
    ys = sample_batch(ctx, model, 5, rng)
    batch = log_prob_batch(ys, ctx, model)
    single = [log_prob(Trajectory(y, dt=arch.dt), ctx, model) for y in ys]
    np.testing.assert_allclose(batch, single, rtol=1e-12)


def test_gradients_match_finite_differences_over_random_draws(arch):
    rng = np.random.default_rng(21)
    h = 1e-5
    for draw in range(100):
        model = make_model(arch, 100 + draw, scale=2.0)
        ctx = make_context(arch, rng)
        y0 = sample(ctx, model, draw).states if draw % 2 else make_plan(arch, rng).states
        features = context_features([ctx], arch)

        tape = Tape()
        flat = tape.leaf(model.params.values)
        plan = tape.leaf(y0[None])
        grads = tape.backward(dm.sum(log_prob_graph(tape, model, features, plan, flat)))

        def f(values):
            return log_prob(Trajectory(y0, dt=arch.dt), ctx, model.with_params(model.params.with_values(values)))

        for i in rng.choice(len(model.params), size=4, replace=False):
            up, down = model.params.values.copy(), model.params.values.copy()
            up[i] += h
            down[i] -= h
            numeric = (f(up) - f(down)) / (2 * h)
            assert grads[flat][i] == pytest.approx(numeric, rel=1e-4, abs=1e-6), f"draw {draw} param {i}"

        numeric_plan = numeric_gradient(lambda y: log_prob(Trajectory(y, dt=arch.dt), ctx, model), y0)
        np.testing.assert_allclose(grads[plan][0], numeric_plan, rtol=1e-4, atol=1e-6, err_msg=f"draw {draw}")


def test_same_seed_same_sample(arch, rng):
    model = make_model(arch, 1, scale=2.0)
    ctx = make_context(arch, rng)
    np.testing.assert_array_equal(sample(ctx, model, 42).states, sample(ctx, model, 42).states)
    assert not np.array_equal(sample(ctx, model, 42).states, sample(ctx, model, 43).states)


def test_zero_weight_samples_centre_on_previous_position(arch, rng):
    model = DensityModel.zeros(arch)
    draws = sample_batch(make_context(arch, rng), model, 1000, np.random.default_rng(0))
    steps = np.diff(np.concatenate([np.zeros((1000, 1, 2)), draws], axis=1), axis=1)
    sigma = arch.min_scale + math.log(2.0)
    se = sigma / math.sqrt(1000)
    assert np.all(np.abs(steps.mean(axis=0)) < 4 * se)


def test_sample_variance_tracks_scale(rng):
    for min_scale in (0.5, 2.0):
        arch = Architecture(horizon=4, past_length=3, num_beams=5, hidden_size=6, min_scale=min_scale)
        draws = sample_batch(make_context(arch, rng), DensityModel.zeros(arch), 4000, np.random.default_rng(1))
        sigma = min_scale + math.log(2.0)
        assert np.var(draws[:, 0, 0]) == pytest.approx(sigma**2, rel=0.1)


def test_mean_trajectory_is_noise_free(arch, rng):
    model = _forced_model(arch, mean_offset=(1.0, 0.5))
    plan = mean_trajectory(make_context(arch, rng), model)
    expected = np.cumsum(np.tile([1.0, 0.5], (arch.horizon, 1)), axis=0)
    np.testing.assert_allclose(plan.states, expected, atol=1e-12)


def _straight_records(arch, n, rng):
    plan = Trajectory(np.column_stack([np.arange(1, arch.horizon + 1) * 1.0, np.zeros(arch.horizon)]), dt=arch.dt)
    ctx = make_context(arch, rng)
    return [(ctx, plan) for _ in range(n)]


def test_training_on_identical_plans_reduces_nll(arch, rng):
    data = _straight_records(arch, 32, rng)
    model = train_mle(data, arch, epochs=10, batch_size=32, rng_seed=0, learning_rate=1e-2)
    history = model.train_meta["nll_history"]
    assert len(history) == 10
    assert history[-1] < history[0]
    assert np.mean(history[-3:]) < np.mean(history[:3])
    assert model.train_meta["final_nll"] == pytest.approx(mean_nll(model, data))


def test_training_recovers_the_sample_mean_of_noisy_offsets(arch, rng):
    ctx = make_context(arch, rng)
    noise = np.random.default_rng(3).normal(0.0, 0.1, size=(64, arch.horizon, 2))
    offsets = np.array([1.0, 0.0]) + noise
    data = [(ctx, Trajectory(np.cumsum(steps, axis=0), dt=arch.dt)) for steps in offsets]
    model = train_mle(data, arch, epochs=500, batch_size=16, rng_seed=1, learning_rate=1e-3)
    first = step_distribution(encode_context(ctx, model), np.zeros((0, 2)), model)
    np.testing.assert_allclose(first.mean, offsets[:, 0, :].mean(axis=0), atol=0.05)


def test_training_is_deterministic_and_order_invariant(arch):
    data = make_records(arch, 20, seed=3)
    a = train_mle(data, arch, epochs=2, batch_size=8, rng_seed=7)
    b = train_mle(list(reversed(data)), arch, epochs=2, batch_size=8, rng_seed=7)
    np.testing.assert_array_equal(a.params.values, b.params.values)
    c = train_mle(data, arch, epochs=2, batch_size=8, rng_seed=8)
    assert not np.array_equal(a.params.values, c.params.values)


def test_training_rejects_empty_data(arch):
    with pytest.raises(ContractError):
        train_mle([], arch)


def test_training_divergence_reports_epoch(arch, rng):
    ctx = make_context(arch, rng)
    huge = Trajectory(np.full((arch.horizon, 2), 1e200), dt=arch.dt)
    with pytest.raises(TrainingError) as info:
        train_mle([(ctx, huge)], arch, epochs=3)
    assert info.value.epoch == 0


def test_fine_tune_raises_likelihood_of_its_data(arch):
    model = make_model(arch, 2, scale=2.0)
    data = make_records(arch, 4, seed=11)
    tuned = fine_tune(model, data, steps=30, learning_rate=1e-2)
    assert mean_nll(tuned, data) < mean_nll(model, data)
    with pytest.raises(ContractError):
        fine_tune(model, [], steps=1)


def test_architecture_round_trips_through_dict():
    arch = make_arch(hidden_size=7)
    assert Architecture.from_dict(arch.to_dict()) == arch
    with pytest.raises(ContractError):
        Architecture(hidden_size=0)


def test_one_step_density_integrates_to_one(rng):
    arch = make_arch(horizon=1)
    model = make_model(arch, seed=3, scale=2.0)
    ctx = make_context(arch, rng)
    gs = step_distribution(encode_context(ctx, model), np.zeros((0, 2)), model)
    h = 0.05
    axis = np.arange(-6.0, 6.0 + h / 2, h)
    z = np.stack(np.meshgrid(axis, axis), axis=-1).reshape(-1, 2)
    ys = (gs.mean + z @ gs.scale_lower.T)[:, None, :]
    jacobian = abs(np.linalg.det(gs.scale_lower))
    total = np.exp(log_prob_batch(ys, ctx, model)).sum() * jacobian * h * h
    assert total == pytest.approx(1.0, rel=0.02)


def test_mean_rollout_dominates_a_three_sigma_detour(arch, rng):
    model = make_model(arch, seed=5)
    ctx = make_context(arch, rng)
    emb = encode_context(ctx, model)
    detour = np.zeros((0, 2))
    for _ in range(arch.horizon):
        gs = step_distribution(emb, detour, model)
        detour = np.vstack([detour, gs.mean + gs.scale_lower @ np.array([3.0, 0.0])])
    mean = mean_trajectory(ctx, model)
    assert log_prob(mean, ctx, model) >= log_prob(Trajectory(detour), ctx, model)
