import numpy as np
import pytest

from softsurf.core import make_rng
from softsurf.datasets import (
    MarkerSpec,
    SplitSpec,
    augment_subsample,
    build_modes,
    choose_markers,
    split_by_location,
)
from softsurf.errors import ConfigError
from softsurf.msm import IndentationRun


def fake_run(location: int, direction_idx: int = 0, n_t: int = 15, n_points: int = 36,
             seed: int = 0) -> IndentationRun:
    rng = np.random.default_rng(seed + location * 31 + direction_idx)
    base = rng.normal(size=(n_points, 3)) * 10.0
    positions = np.empty((n_t + 1, n_points, 3))
    positions[0] = base
    for t in range(1, n_t + 1):
        sag = rng.normal(size=(n_points, 3)) * 0.05
        sag[location, 2] -= 0.8
        positions[t] = positions[t - 1] + sag
    return IndentationRun(
        location_index=location,
        direction_index=direction_idx,
        direction=np.array([0.0, 0.0, -1.0]),
        forces=np.arange(n_t + 1) * 0.5,
        positions=positions,
        velocities=np.zeros_like(positions),
    )


class TestBuildModes:
    def test_counts_single_run(self):
        modes = build_modes([fake_run(3)], seed=0)
        assert len(modes.single_step) == 15
        assert len(modes.multi_step) == 15

    def test_single_step_force_is_half_newton_exactly(self):
        modes = build_modes([fake_run(3), fake_run(7)], seed=1)
        assert all(s.target_force_change == 0.5 for s in modes.single_step)
        assert [s.t_out - s.t_in for s in modes.single_step] == [1] * 30

    def test_multi_step_force_range(self):
        modes = build_modes([fake_run(i) for i in range(6)], seed=2)
        for s in modes.multi_step:
            assert s.t_out - s.t_in >= 2
            assert s.target_force_change == (s.t_out - s.t_in) * 0.5
            assert 1.0 <= s.target_force_change <= 7.5

    def test_full_span_pair_has_max_force(self):
        run = fake_run(5)
        modes = build_modes([run], seed=0)
        spans = {(s.t_in, s.t_out) for s in modes.multi_step}
        # The (0, 15) pair, when drawn, carries the full 7.5 N change.
        for s in modes.multi_step:
            if (s.t_in, s.t_out) == (0, 15):
                assert s.target_force_change == 7.5
        assert spans  # sanity

    def test_condition_tracks_contact_point(self):
        run = fake_run(4)
        modes = build_modes([run], seed=3)
        for s in modes.single_step + modes.multi_step:
            np.testing.assert_array_equal(s.condition.c_s, s.input_points[s.contact_row])
            # c_e equals input + displacement up to round-off of the stored difference
            np.testing.assert_allclose(
                s.condition.c_e,
                (s.input_points + s.target_displacement)[s.contact_row],
                rtol=1e-12, atol=1e-12,
            )
            np.testing.assert_array_equal(
                s.input_points[s.contact_row], run.positions[s.t_in][run.location_index]
            )

    def test_deterministic_by_seed(self):
        runs = [fake_run(i) for i in range(3)]
        a = build_modes(runs, seed=9)
        b = build_modes(runs, seed=9)
        assert [(s.t_in, s.t_out) for s in a.multi_step] == [
            (s.t_in, s.t_out) for s in b.multi_step
        ]

    def test_short_run_rejected(self):
        with pytest.raises(ValueError, match="at least 3 states"):
            build_modes([fake_run(1, n_t=1)], seed=0)


class TestSplitByLocation:
    def test_hundred_locations_7_2_1(self):
        runs = [fake_run(loc, d, n_points=128) for loc in range(100) for d in range(2)]
        train, val, test = split_by_location(runs, SplitSpec(ratios=(7, 2, 1), seed=0))
        locs = lambda rs: {r.location_index for r in rs}
        assert len(locs(train)) == 70
        assert len(locs(val)) == 20
        assert len(locs(test)) == 10
        assert len(train) == 140 and len(val) == 40 and len(test) == 20

    def test_twenty_locations_12_3_5(self):
        runs = [fake_run(loc) for loc in range(20)]
        train, val, test = split_by_location(runs, SplitSpec(ratios=(12, 3, 5), seed=1))
        assert (len(train), len(val), len(test)) == (12, 3, 5)

    def test_disjoint(self):
        runs = [fake_run(loc, d) for loc in range(10) for d in range(3)]
        train, val, test = split_by_location(runs, SplitSpec(ratios=(7, 2, 1), seed=5))
        sets = [{r.location_index for r in split} for split in (train, val, test)]
        assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
        assert sets[0] | sets[1] | sets[2] == set(range(10))

    def test_too_few_locations(self):
        with pytest.raises(ConfigError, match="locations"):
            split_by_location([fake_run(0), fake_run(1)], SplitSpec(ratios=(7, 2, 1), seed=0))

    def test_seed_changes_assignment(self):
        runs = [fake_run(loc) for loc in range(30)]
        t0, _, _ = split_by_location(runs, SplitSpec(ratios=(7, 2, 1), seed=0))
        t1, _, _ = split_by_location(runs, SplitSpec(ratios=(7, 2, 1), seed=1))
        assert {r.location_index for r in t0} != {r.location_index for r in t1}


class TestAugmentSubsample:
    def test_full_fraction_is_identity(self):
        s = build_modes([fake_run(2)], seed=0).single_step[0]
        out = augment_subsample(s, 1.0, make_rng(0))
        np.testing.assert_array_equal(out.input_points, s.input_points)
        assert out.contact_row == s.contact_row

    def test_ten_percent_of_1024_keeps_103_and_contact(self):
        run = fake_run(17, n_points=1024)
        s = build_modes([run], seed=0).single_step[0]
        out = augment_subsample(s, 0.1, make_rng(1))
        assert out.n_points == 103
        np.testing.assert_array_equal(
            out.input_points[out.contact_row], s.input_points[s.contact_row]
        )
        np.testing.assert_array_equal(out.condition.c_s, s.condition.c_s)

    def test_rows_stay_aligned(self):
        s = build_modes([fake_run(3)], seed=0).multi_step[0]
        out = augment_subsample(s, 0.5, make_rng(2))
        # Every subsampled row must exist as an (input, target) pair in the
        # original sample.
        orig = {tuple(p): tuple(d) for p, d in zip(s.input_points, s.target_displacement)}
        for p, d in zip(out.input_points, out.target_displacement):
            assert orig[tuple(p)] == tuple(d)

    def test_fresh_subset_each_call(self):
        s = build_modes([fake_run(4, n_points=64)], seed=0).single_step[0]
        rng = make_rng(3)
        a = augment_subsample(s, 0.3, rng)
        b = augment_subsample(s, 0.3, rng)
        assert not np.array_equal(a.input_points, b.input_points)

    def test_too_small_subset_rejected(self):
        s = build_modes([fake_run(5, n_points=20)], seed=0).single_step[0]
        with pytest.raises(ValueError, match="too small"):
            augment_subsample(s, 0.1, make_rng(0), min_points=6)

    def test_invalid_fraction(self):
        s = build_modes([fake_run(6)], seed=0).single_step[0]
        with pytest.raises(ValueError, match="fraction"):
            augment_subsample(s, 0.0, make_rng(0))


class TestMarkers:
    def test_sparse_cloud_has_markers_plus_contact(self):
        runs = [fake_run(i, n_points=64) for i in (3, 9, 20)]
        markers = choose_markers(runs, 25, seed=0)
        assert len(markers.indices) == 25
        assert not set(markers.indices.tolist()) & {3, 9, 20}
        modes = build_modes(runs, seed=0, markers=markers)
        for s in modes.combined():
            assert s.n_points == 26
            assert s.contact_row == 25
            np.testing.assert_array_equal(s.condition.c_s, s.input_points[25])

    def test_marker_rows_match_source_grid(self):
        runs = [fake_run(7, n_points=64)]
        markers = choose_markers(runs, 10, seed=1)
        modes = build_modes(runs, seed=0, markers=markers)
        s = modes.single_step[0]
        np.testing.assert_array_equal(
            s.input_points[:10], runs[0].positions[s.t_in][markers.indices]
        )

    def test_markers_deterministic(self):
        runs = [fake_run(2, n_points=64)]
        a = choose_markers(runs, 12, seed=4)
        b = choose_markers(runs, 12, seed=4)
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_duplicate_marker_indices_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            MarkerSpec(indices=np.array([1, 1, 2]))

    def test_too_many_markers(self):
        runs = [fake_run(0, n_points=10)]
        with pytest.raises(ConfigError, match="markers"):
            choose_markers(runs, 10, seed=0)
