import numpy as np
import pytest

from rip_planner import ContractError, Trajectory, build_library


def _plans(points: np.ndarray) -> list[Trajectory]:
    return [Trajectory(p.reshape(-1, 2)) for p in points]


def test_identical_plans_give_a_single_centroid():
    plan = np.cumsum(np.ones((4, 2)), axis=0)
    library = build_library([Trajectory(plan) for _ in range(10)], library_size=1)
    assert len(library) == 1
    np.testing.assert_array_equal(library.centroids[0], plan)


def test_two_separated_clusters_recover_their_means():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 0.1, size=(30, 8))
    b = rng.normal(50.0, 0.1, size=(20, 8)) + np.arange(8)
    library = build_library(_plans(np.vstack([a, b])), library_size=2, rng_seed=3)
    centroids = sorted(library.centroids.reshape(2, -1), key=lambda c: c[0])
    np.testing.assert_allclose(centroids[0], a.mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(centroids[1], b.mean(axis=0), atol=1e-6)
    assert library.source_meta["library_size"] == 2
    assert library.source_meta["num_source_plans"] == 50


def test_size_reduced_to_distinct_plans():
    plans = _plans(np.repeat(np.arange(3.0)[:, None] * np.ones(4), 5, axis=0))
    library = build_library(plans, library_size=64)
    assert len(library) == 3
    assert library.source_meta["requested_size"] == 64
    assert library.source_meta["library_size"] == 3
    assert library.source_meta["num_distinct_plans"] == 3


def test_same_seed_same_library():
    rng = np.random.default_rng(1)
    plans = _plans(rng.normal(size=(40, 8)))
    a = build_library(plans, library_size=5, rng_seed=2)
    b = build_library(plans, library_size=5, rng_seed=2)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert a.centroids.shape == (5, 4, 2)
    assert a.dt == plans[0].dt


def test_rejects_bad_inputs():
    with pytest.raises(ContractError):
        build_library([])
    with pytest.raises(ContractError):
        build_library([Trajectory(np.zeros((2, 2)))], library_size=0)
    with pytest.raises(ContractError):
        build_library([Trajectory(np.zeros((2, 2))), Trajectory(np.zeros((3, 2)))])


def test_seed_outside_the_generator_range_is_a_contract_error():
    rng = np.random.default_rng(5)
    plans = _plans(rng.normal(size=(10, 8)))
    for seed in (-1, 2**32):
        with pytest.raises(ContractError):
            build_library(plans, library_size=3, rng_seed=seed)
    assert len(build_library(plans, library_size=3, rng_seed=2**32 - 1)) == 3
