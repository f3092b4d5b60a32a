"""Supervised sample construction from indentation runs: single-step and
multi-step pairings, marker projection for sparse clouds, location-level
splits, and point-subsampling augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from softsurf.core import Condition, Sample, make_rng
from softsurf.errors import ConfigError
from softsurf.msm import IndentationRun


@dataclass(frozen=True)
class MarkerSpec:
    """Fixed marker rows for sparse clouds; the contact point is appended as
    the final row of every projected cloud (the tracked indenter tip)."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or len(idx) < 1 or len(np.unique(idx)) != len(idx):
            raise ValueError("marker indices must be unique and non-empty")
        object.__setattr__(self, "indices", idx)

    @property
    def n_points(self) -> int:
        return len(self.indices) + 1


def choose_markers(
    runs: list[IndentationRun], n_markers: int, seed: int
) -> MarkerSpec:
    """Draw fixed marker indices, avoiding every contact location in ``runs``."""
    n_points = runs[0].n_points
    contacts = {run.location_index for run in runs}
    candidates = np.array(sorted(set(range(n_points)) - contacts), dtype=np.int64)
    if len(candidates) < n_markers:
        raise ConfigError(
            f"cannot place {n_markers} markers: only {len(candidates)} grid "
            f"points are not contact locations"
        )
    rng = make_rng(seed)
    picked = rng.choice(candidates, size=n_markers, replace=False)
    return MarkerSpec(indices=np.sort(picked))


def _make_sample(
    run: IndentationRun, t_in: int, t_out: int, markers: MarkerSpec | None
) -> Sample:
    if markers is None:
        rows = slice(None)
        contact_row = run.location_index
    else:
        rows = np.concatenate([markers.indices, [run.location_index]])
        contact_row = len(markers.indices)
    p_in = run.positions[t_in][rows]
    p_out = run.positions[t_out][rows]
    return Sample(
        input_points=p_in,
        condition=Condition(c_s=p_in[contact_row], c_e=p_out[contact_row]),
        target_displacement=p_out - p_in,
        target_force_change=float(run.forces[t_out] - run.forces[t_in]),
        location_id=run.location_index,
        direction_id=run.direction_index,
        t_in=t_in,
        t_out=t_out,
        contact_row=contact_row,
    )


@dataclass
class DatasetModes:
    """Adjacent-state pairs (fixed smallest force increment) and wider pairs
    at least two ramp steps apart."""

    single_step: list
    multi_step: list

    def combined(self) -> list:
        return self.single_step + self.multi_step


def build_modes(
    runs: list[IndentationRun],
    seed: int,
    n_multi_pairs: int = 15,
    markers: MarkerSpec | None = None,
) -> DatasetModes:
    """Single-step: every (t, t+1) pair. Multi-step: ``n_multi_pairs`` pairs
    per run, uniform with replacement over {(t, t') : t' >= t + 2}, fixed at
    build time by ``seed``."""
    rng = make_rng(seed)
    single, multi = [], []
    for run in runs:
        n_t = run.n_states - 1
        if n_t < 2:
            raise ValueError(f"run needs at least 3 states for multi-step pairs, got {run.n_states}")
        for t in range(n_t):
            single.append(_make_sample(run, t, t + 1, markers))
        valid = [(t, t2) for t in range(n_t - 1) for t2 in range(t + 2, n_t + 1)]
        picks = rng.integers(0, len(valid), size=n_multi_pairs)
        for p in picks:
            t_in, t_out = valid[p]
            multi.append(_make_sample(run, t_in, t_out, markers))
    return DatasetModes(single_step=single, multi_step=multi)


@dataclass(frozen=True)
class SplitSpec:
    """Location-level split ratios (train:val:test) and the shuffle seed."""

    ratios: tuple = (7, 2, 1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or sum(self.ratios) <= 0:
            raise ConfigError(f"ratios must be three non-negative parts, got {self.ratios}")

    @staticmethod
    def parse(text: str, seed: int = 0) -> "SplitSpec":
        parts = tuple(int(p) for p in text.split(":"))
        return SplitSpec(ratios=parts, seed=seed)


def _apportion(total: int, ratios: tuple) -> list[int]:
    ssum = sum(ratios)
    exact = [total * r / ssum for r in ratios]
    counts = [math.floor(e) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for _ in range(total - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    return counts


def split_by_location(
    runs: list[IndentationRun], spec: SplitSpec
) -> tuple[list[IndentationRun], list[IndentationRun], list[IndentationRun]]:
    """Partition whole locations into train/val/test; no location straddles
    two splits."""
    locations = []
    for run in runs:
        if run.location_index not in locations:
            locations.append(run.location_index)
    n_parts = sum(1 for r in spec.ratios if r > 0)
    if len(locations) < n_parts:
        raise ConfigError(f"need at least {n_parts} locations, got {len(locations)}")
    counts = _apportion(len(locations), spec.ratios)
    order = make_rng(spec.seed).permutation(len(locations))
    shuffled = [locations[i] for i in order]
    train_locs = set(shuffled[: counts[0]])
    val_locs = set(shuffled[counts[0] : counts[0] + counts[1]])
    test_locs = set(shuffled[counts[0] + counts[1] :])
    train = [r for r in runs if r.location_index in train_locs]
    val = [r for r in runs if r.location_index in val_locs]
    test = [r for r in runs if r.location_index in test_locs]
    return train, val, test


def augment_subsample(
    sample: Sample, fraction: float, rng: np.random.Generator, min_points: int = 1
) -> Sample:
    """Restrict a sample to ceil(fraction * N) random points; the contact
    point is always kept so the condition stays well defined."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = sample.n_points
    m = math.ceil(fraction * n)
    if m < min_points:
        raise ValueError(
            f"subsample of {m} points is too small for the graph (need >= {min_points})"
        )
    if m == n:
        return sample
    others = np.delete(np.arange(n), sample.contact_row)
    picked = rng.choice(others, size=m - 1, replace=False)
    rows = np.sort(np.concatenate([picked, [sample.contact_row]]))
    contact_row = int(np.searchsorted(rows, sample.contact_row))
    return Sample(
        input_points=sample.input_points[rows],
        condition=sample.condition,
        target_displacement=sample.target_displacement[rows],
        target_force_change=sample.target_force_change,
        location_id=sample.location_id,
        direction_id=sample.direction_id,
        t_in=sample.t_in,
        t_out=sample.t_out,
        contact_row=contact_row,
    )
