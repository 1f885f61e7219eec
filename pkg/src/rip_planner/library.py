"""Trajectory library: a fixed set of centroid plans searched exhaustively.

The centroids come from k-means over flattened expert plans in the ego frame.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from .errors import ContractError
from .types import Trajectory, TrajectoryLibrary

logger = logging.getLogger(__name__)

MAX_SEED = 2**32 - 1


def build_library(
    plans: Sequence[Trajectory],
    library_size: int = 64,
    rng_seed: int = 0,
    max_rounds: int = 100,
) -> TrajectoryLibrary:
    """Cluster expert plans into a fixed library of centroid trajectories.

    Plans are flattened to 2T-dim vectors and grouped with Lloyd's algorithm
    from a k-means++ start. When there are no more distinct plans than the
    requested size, the distinct plans themselves form the library.
    """
    if not plans:
        raise ContractError("build_library needs at least one plan")
    if library_size < 1:
        raise ContractError("library size must be >= 1")
    if not 0 <= rng_seed <= MAX_SEED:
        raise ContractError(f"library seed must lie in [0, {MAX_SEED}], got {rng_seed}")
    horizon = plans[0].horizon
    if any(p.horizon != horizon for p in plans):
        raise ContractError("plans must share one horizon")

    flat = np.stack([p.states.reshape(-1) for p in plans])
    distinct = np.unique(flat, axis=0)
    size = min(library_size, len(distinct))
    meta = {
        "num_source_plans": len(plans),
        "num_distinct_plans": int(len(distinct)),
        "requested_size": library_size,
        "library_size": size,
        "rng_seed": rng_seed,
    }
    if size < library_size:
        logger.info("library size reduced from %d to %d distinct plans", library_size, size)

    if size == len(distinct):
        centroids = distinct
        meta["rounds"] = 0
    else:
        kmeans = KMeans(
            n_clusters=size,
            init="k-means++",
            n_init=1,
            max_iter=max_rounds,
            tol=0.0,
            algorithm="lloyd",
            random_state=rng_seed,
        ).fit(flat)
        centroids = kmeans.cluster_centers_
        meta["rounds"] = int(kmeans.n_iter_)
        logger.debug("k-means finished after %d rounds, inertia %.4f", kmeans.n_iter_, kmeans.inertia_)

    return TrajectoryLibrary(
        centroids=centroids.reshape(size, horizon, 2),
        dt=plans[0].dt,
        source_meta=meta,
    )
