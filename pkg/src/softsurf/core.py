"""Shared geometric types, point-cloud arithmetic, and seeded randomness.

Point clouds are plain ``(N, 3)`` float64 arrays in millimetres. Point order
is significant: row ``n`` of an input cloud and row ``n`` of its displacement
field refer to the same material point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64); equal seeds give equal streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_rng(seed: int, index: int) -> np.random.Generator:
    """Independent child stream ``index`` of ``seed``, for parallel work."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,)))
    )


def as_cloud(points) -> np.ndarray:
    """Validate and return an (N, 3) float64 point cloud."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
        raise ValueError(f"point cloud must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point cloud contains non-finite coordinates")
    return arr


def apply_displacement(x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Deformed cloud ``x + d``; inputs are left unmodified."""
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if x.shape != d.shape:
        raise ValueError(
            f"cloud shape {x.shape} does not match displacement shape {d.shape}"
        )
    return x + d


def mean_euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over points of the Euclidean distance between paired rows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cloud shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sqrt(np.einsum("ij,ij->i", d, d)).mean())


def sample_unit_direction_in_cone(
    rng: np.random.Generator, axis: np.ndarray, half_angle_deg: float
) -> np.ndarray:
    """Unit vector uniform over the spherical cap of ``half_angle_deg`` around ``axis``.

    Inverse-CDF sampling: cos(theta) uniform in [cos(half_angle), 1], azimuth
    uniform in [0, 2*pi). A zero half-angle returns the axis exactly.
    """
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise ValueError("cone axis must be non-zero")
    if not 0.0 <= half_angle_deg <= 90.0:
        raise ValueError(f"half angle must be in [0, 90] degrees, got {half_angle_deg}")
    axis = axis / norm

    cos_min = np.cos(np.deg2rad(half_angle_deg))
    cos_t = rng.uniform(cos_min, 1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))

    # Orthonormal basis around the axis; pick the seed vector least aligned
    # with it so the cross product is well conditioned.
    seed_vec = np.zeros(3)
    seed_vec[np.argmin(np.abs(axis))] = 1.0
    e1 = np.cross(axis, seed_vec)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)

    return sin_t * np.cos(phi) * e1 + sin_t * np.sin(phi) * e2 + cos_t * axis


@dataclass(frozen=True)
class Condition:
    """Indenter-tip start and end coordinates (mm), serialized flat as 6 values."""

    c_s: np.ndarray
    c_e: np.ndarray

    def __post_init__(self):
        for name in ("c_s", "c_e"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector, got {v!r}")
            object.__setattr__(self, name, v)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.c_s, self.c_e])


@dataclass(frozen=True)
class Sample:
    """One supervised example: input cloud, condition, targets, provenance.

    ``contact_row`` is the row of the loaded point inside ``input_points``;
    the condition start/end equal that row's position in the input and in the
    deformed target, respectively.
    """

    input_points: np.ndarray
    condition: Condition
    target_displacement: np.ndarray
    target_force_change: float
    location_id: int
    direction_id: int
    t_in: int
    t_out: int
    contact_row: int

    def __post_init__(self):
        object.__setattr__(self, "input_points", as_cloud(self.input_points))
        d = np.asarray(self.target_displacement, dtype=np.float64)
        if d.shape != self.input_points.shape or not np.all(np.isfinite(d)):
            raise ValueError(
                f"target displacement shape {d.shape} does not match "
                f"input cloud shape {self.input_points.shape}"
            )
        object.__setattr__(self, "target_displacement", d)
        if not self.target_force_change > 0.0:
            raise ValueError(
                f"target force change must be positive, got {self.target_force_change}"
            )
        if not 0 <= self.contact_row < len(self.input_points):
            raise ValueError(f"contact row {self.contact_row} out of range")

    @property
    def n_points(self) -> int:
        return self.input_points.shape[0]

    def target_points(self) -> np.ndarray:
        return apply_displacement(self.input_points, self.target_displacement)
