from __future__ import annotations

import math

import numpy as np


def wrap_angle(angle: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def polar_array_to_cartesian(angles_rad: np.ndarray, distances: np.ndarray) -> np.ndarray:
    """Vectorized polar to cartesian. Returns shape (N, 2) array of [x, y]."""
    return np.column_stack([distances * np.cos(angles_rad), distances * np.sin(angles_rad)])


def beam_directions(num_beams: int, heading: float = 0.0) -> np.ndarray:
    """Unit vectors of evenly spaced beams over 360 degrees, beam 0 along heading."""
    bearings = heading + np.arange(num_beams) * (2.0 * math.pi / num_beams)
    return polar_array_to_cartesian(bearings, np.ones(num_beams))


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_ego_frame(points: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    """Express world-frame points in the frame at origin with +x along heading."""
    return (np.asarray(points, dtype=np.float64) - origin) @ rotation_matrix(heading)


def to_world_frame(points: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ rotation_matrix(heading).T + origin


def cumulative_arc_length(points: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def offset_polyline(points: np.ndarray, offset: float) -> np.ndarray:
    """Shift every vertex along its left normal (negative offset = right)."""
    tangents = np.empty_like(points)
    tangents[1:-1] = points[2:] - points[:-2]
    tangents[0] = points[1] - points[0]
    tangents[-1] = points[-1] - points[-2]
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
    return points + offset * normals


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def ray_segment_hits(
    origin: np.ndarray,
    directions: np.ndarray,
    starts: np.ndarray,
    ends: np.ndarray,
) -> np.ndarray:
    """Distance along each unit ray to the nearest segment. inf = no hit."""
    if len(starts) == 0:
        return np.full(len(directions), np.inf)
    d = directions[:, None, :]  # (R, 1, 2)
    e = (ends - starts)[None, :, :]  # (1, S, 2)
    w = (starts - origin)[None, :, :]
    denom = _cross(d, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(w, e) / denom
        u = _cross(w, d) / denom
    valid = (np.abs(denom) > 1e-12) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    return np.where(valid, t, np.inf).min(axis=1)


def ray_circle_hits(
    origin: np.ndarray,
    directions: np.ndarray,
    centers: np.ndarray,
    radii: np.ndarray,
) -> np.ndarray:
    """Distance along each unit ray to the nearest circle. 0 if origin is inside."""
    if len(centers) == 0:
        return np.full(len(directions), np.inf)
    f = (origin - centers)[None, :, :]  # (1, C, 2)
    b = np.sum(directions[:, None, :] * f, axis=-1)  # (R, C)
    c = np.sum(f * f, axis=-1) - radii[None, :] ** 2  # (1, C)
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        root = np.sqrt(disc)
    near = -b - root
    far = -b + root
    t = np.where(near >= 0.0, near, np.where(far >= 0.0, 0.0, np.inf))
    t = np.where(disc >= 0.0, t, np.inf)
    t = np.where(np.broadcast_to(c < 0.0, t.shape), 0.0, t)
    return t.min(axis=1)


def point_segment_projection(
    point: np.ndarray, starts: np.ndarray, ends: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Distances from point to each segment and the clamped segment parameter."""
    e = ends - starts
    length_sq = np.sum(e * e, axis=1)
    u = np.clip(np.sum((point - starts) * e, axis=1) / length_sq, 0.0, 1.0)
    closest = starts + u[:, None] * e
    return np.linalg.norm(point - closest, axis=1), u
