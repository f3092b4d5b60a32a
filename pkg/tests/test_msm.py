import numpy as np
import pytest

from softsurf import msm
from softsurf.errors import ConfigError, DivergenceError


def single_mass_state(config, position=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0),
                      external=(0.0, 0.0, 0.0)):
    """One mass with no between-mass springs, anchored only by its rest spring."""
    return msm.make_state(
        positions=[position], velocities=[velocity],
        rest_positions=[(0.0, 0.0, 0.0)],
        spring_i=[], spring_j=[], spring_rest=[], spring_k=[],
        external_force=[external], config=config,
    )


class TestBuildSurface:
    def test_smallest_grid(self):
        config = msm.MsmConfig(grid_n=2, side_length=100.0)
        state = msm.build_surface(config)
        assert state.n_points == 4
        assert len(state.spring_i) == 5  # 4 edges + 1 diagonal
        diag = state.spring_rest.max()
        assert diag == pytest.approx(np.sqrt(2.0) * 0.1, abs=1e-15)

    def test_grid3_counts(self):
        # 2x2 cells: 12 axis-aligned springs + 4 diagonals.
        state = msm.build_surface(msm.MsmConfig(grid_n=3))
        assert state.n_points == 9
        assert len(state.spring_i) == 16

    def test_default_grid_point_count(self):
        state = msm.build_surface(msm.MsmConfig())
        assert state.n_points == 1024

    def test_rest_lengths_match_geometry(self):
        state = msm.build_surface(msm.MsmConfig(grid_n=4))
        lengths = np.linalg.norm(
            state.positions[state.spring_i] - state.positions[state.spring_j], axis=1
        )
        np.testing.assert_allclose(lengths, state.spring_rest, rtol=0, atol=0)
        np.testing.assert_array_equal(state.velocities, 0.0)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            msm.build_surface(msm.MsmConfig(grid_n=1))
        with pytest.raises(ConfigError):
            msm.MsmConfig(mass=0.0).validate()


class TestNetForces:
    def test_rest_state_zero(self):
        config = msm.MsmConfig(grid_n=4)
        state = msm.build_surface(config)
        np.testing.assert_allclose(msm.net_forces(state, config), 0.0, atol=1e-18)

    def test_stretched_spring_hooke(self):
        config = msm.MsmConfig()
        state = msm.make_state(
            positions=[(0.0, 0.0, 0.0), (0.11, 0.0, 0.0)],
            velocities=np.zeros((2, 3)),
            rest_positions=[(0.0, 0.0, 0.0), (0.11, 0.0, 0.0)],  # no anchor pull
            spring_i=[0], spring_j=[1], spring_rest=[0.1], spring_k=[100.0],
            external_force=np.zeros((2, 3)), config=config,
        )
        f = msm.net_forces(state, config)
        np.testing.assert_allclose(f[0], [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(f[1], [-1.0, 0.0, 0.0], atol=1e-12)

    def test_fixed_spring_restoring_force(self):
        config = msm.MsmConfig(k_fixed=21.0)
        state = single_mass_state(config, position=(0.01, 0.0, 0.0))
        f = msm.net_forces(state, config)
        np.testing.assert_allclose(f[0], [-0.21, 0.0, 0.0], atol=1e-15)

    def test_non_finite_positions_rejected(self):
        config = msm.MsmConfig()
        state = single_mass_state(config)
        state.positions[0, 0] = np.nan
        with pytest.raises(DivergenceError, match="mass 0"):
            msm.net_forces(state, config)


class TestStep:
    def test_equilibrium_is_fixed_point(self):
        config = msm.MsmConfig(grid_n=3)
        state = msm.build_surface(config)
        after = msm.step(state, config)
        np.testing.assert_array_equal(after.positions, state.positions)
        np.testing.assert_array_equal(after.velocities, state.velocities)

    def test_one_step_arithmetic(self):
        # From rest, anchor and damping forces vanish, so one semi-implicit
        # step gives dv = (F/m) dt and dp = dv * dt.
        config = msm.MsmConfig(mass=0.00016, dt=0.0001)
        state = single_mass_state(config, external=(0.0, 0.0, 0.001))
        after = msm.step(state, config)
        assert after.velocities[0, 2] == pytest.approx(6.25e-4, rel=1e-12)
        assert after.positions[0, 2] == pytest.approx(6.25e-8, rel=1e-12)

    def test_energy_never_increases_across_windows(self):
        # Damped single mass released from an offset: kinetic + anchor-spring
        # potential energy must not grow over any 1000-step window.
        config = msm.MsmConfig()
        state = single_mass_state(config, position=(0.0, 0.0, -0.02))

        def energy(s):
            ke = 0.5 * config.mass * float(np.sum(s.velocities**2))
            pe = 0.5 * config.k_fixed * float(np.sum((s.positions - s.rest_positions) ** 2))
            return ke + pe

        energies = [energy(state)]
        for _ in range(5):
            for _ in range(1000):
                state = msm.step(state, config)
            energies.append(energy(state))
        assert all(b <= a + 1e-15 for a, b in zip(energies, energies[1:]))

    def test_blow_up_detection(self):
        config = msm.MsmConfig(dt=10.0)  # catastrophically large step
        state = msm.build_surface(msm.MsmConfig(grid_n=3))
        ext = np.zeros_like(state.positions)
        ext[4, 2] = -5.0
        state = msm.make_state(
            positions=state.positions, velocities=state.velocities,
            rest_positions=state.rest_positions, spring_i=state.spring_i,
            spring_j=state.spring_j, spring_rest=state.spring_rest,
            spring_k=state.spring_k, external_force=ext, config=config,
        )
        with pytest.raises(DivergenceError, match="blew up"):
            for _ in range(10_000):
                state = msm.step(state, config)


class TestRunToStability:
    def test_rest_state_zero_steps(self):
        config = msm.MsmConfig(grid_n=4)
        state = msm.build_surface(config)
        final, steps = msm.run_to_stability(state, config)
        assert steps == 0
        np.testing.assert_array_equal(final.positions, state.positions)

    def test_single_mass_equilibrium_depth(self):
        # Tight thresholds drive the integrator to the closed-form Hooke
        # equilibrium x = F / k_fixed.
        config = msm.MsmConfig(k_fixed=21.0, stability_v=1e-8, stability_f=1e-8)
        state = single_mass_state(config, external=(0.0, 0.0, -0.5))
        final, steps = msm.run_to_stability(state, config)
        assert steps > 0
        assert abs(-final.positions[0, 2] - 0.5 / 21.0) < 1e-6

    def test_center_indentation_converges_default_config(self):
        config = msm.MsmConfig()
        state = msm.build_surface(config)
        ext = np.zeros_like(state.positions)
        center = msm.grid_index(config, 16, 16)
        ext[center, 2] = -0.5
        loaded = msm.make_state(
            positions=state.positions, velocities=state.velocities,
            rest_positions=state.rest_positions, spring_i=state.spring_i,
            spring_j=state.spring_j, spring_rest=state.spring_rest,
            spring_k=state.spring_k, external_force=ext, config=config,
            incidence=state.incidence,
        )
        final, steps = msm.run_to_stability(loaded, config)
        assert 0 < steps < config.max_steps_per_state
        assert final.max_speed() < config.stability_v
        assert final.max_residual_force() < config.stability_f

    def test_max_steps_error_carries_residuals(self):
        config = msm.MsmConfig(max_steps_per_state=3)
        state = single_mass_state(config, external=(0.0, 0.0, -0.5))
        with pytest.raises(DivergenceError, match="max residual"):
            msm.run_to_stability(state, config)


class TestForceSchedule:
    def test_default_schedule_exact(self):
        config = msm.MsmConfig()
        schedule = msm.force_schedule(config)
        np.testing.assert_array_equal(schedule, np.arange(1, 16) * 0.5)
        assert schedule[0] == 0.5
        assert schedule[7] == 4.0
        assert schedule[-1] == 7.5

    def test_n_n_divides_force(self):
        config = msm.MsmConfig(n_n=3)
        schedule = msm.force_schedule(config)
        assert schedule[-1] == pytest.approx(7.5 / 3)


@pytest.fixture(scope="module")
def small_run():
    config = msm.MsmConfig(grid_n=9, n_t=15)
    rest = msm.build_surface(config)
    center = msm.grid_index(config, 4, 4)
    plan = msm.IndentationPlan(
        location_index=center,
        direction=np.array([0.0, 0.0, -1.0]),
        magnitudes=msm.force_schedule(config),
    )
    return config, rest, msm.indent(rest, plan, config)


class TestIndent:

    def test_state_count_and_rest_first(self, small_run):
        config, rest, states = small_run
        assert len(states) == config.n_t + 1
        first, f0 = states[0]
        assert f0 == 0.0
        np.testing.assert_array_equal(first.positions, rest.positions)

    def test_monotonic_contact_depth(self, small_run):
        config, rest, states = small_run
        center = msm.grid_index(config, 4, 4)
        depths = [
            np.linalg.norm(s.positions[center] - rest.positions[center])
            for s, _ in states
        ]
        assert all(b >= a - 1e-12 for a, b in zip(depths, depths[1:]))

    def test_every_emitted_state_is_static(self, small_run):
        config, _, states = small_run
        for s, f in states[1:]:
            assert s.max_speed() < config.stability_v
            assert s.max_residual_force() < config.stability_f
            contact_ext = np.linalg.norm(s.external_force, axis=1).max()
            assert contact_ext == pytest.approx(f)

    def test_double_reflection_symmetry(self, small_run):
        # Centre indentation along the normal: the triangulated sheet is
        # symmetric under the composition of both centre-plane reflections.
        config, rest, states = small_run
        n = config.grid_n
        final = states[-1][0]
        disp = final.positions - rest.positions
        mapping = np.empty(n * n, dtype=int)
        for i in range(n):
            for j in range(n):
                mapping[i * n + j] = (n - 1 - i) * n + (n - 1 - j)
        mirrored = disp[mapping] * np.array([-1.0, -1.0, 1.0])
        assert np.abs(mirrored - disp).max() < 1e-6


class TestTranslationEquivariance:
    def test_translated_rest_translates_statics(self):
        config = msm.MsmConfig(grid_n=6)
        rest = msm.build_surface(config)
        offset = np.array([0.25, -0.125, 0.5])  # binary fractions: exact adds
        translated = msm.make_state(
            positions=rest.positions + offset,
            velocities=rest.velocities,
            rest_positions=rest.rest_positions + offset,
            spring_i=rest.spring_i, spring_j=rest.spring_j,
            spring_rest=rest.spring_rest, spring_k=rest.spring_k,
            external_force=rest.external_force, config=config,
        )
        plan = msm.IndentationPlan(
            location_index=msm.grid_index(config, 2, 3),
            direction=np.array([0.0, 0.0, -1.0]),
            magnitudes=np.array([0.5, 1.0]),
        )
        base = msm.indent(rest, plan, config)
        moved = msm.indent(translated, plan, config)
        for (s0, _), (s1, _) in zip(base, moved):
            np.testing.assert_allclose(s1.positions - offset, s0.positions, atol=1e-12)


class TestGenerateDataset:
    def test_counts_and_determinism(self):
        config = msm.MsmConfig(grid_n=6, n_locations=2, n_directions=2, n_t=3)
        runs_a = msm.generate_dataset(config, seed=5)
        runs_b = msm.generate_dataset(config, seed=5)
        assert len(runs_a) == 4
        assert all(r.n_states == 4 for r in runs_a)
        for a, b in zip(runs_a, runs_b):
            np.testing.assert_array_equal(a.positions, b.positions)
            np.testing.assert_array_equal(a.direction, b.direction)

    def test_single_run_counting(self):
        config = msm.MsmConfig(grid_n=5, n_locations=1, n_directions=1, n_t=15)
        runs = msm.generate_dataset(config, seed=0)
        assert len(runs) == 1
        assert runs[0].n_states == 16

    def test_locations_distinct_and_interior(self):
        config = msm.MsmConfig(grid_n=6, n_locations=10, n_directions=1, n_t=2)
        plans = msm.build_plans(config, seed=9)
        locs = [p.location_index for p in plans]
        assert len(set(locs)) == 10
        interior = set(msm.interior_indices(config).tolist())
        assert set(locs) <= interior

    def test_first_direction_is_surface_normal(self):
        config = msm.MsmConfig(grid_n=6, n_locations=2, n_directions=3, n_t=2)
        plans = msm.build_plans(config, seed=1)
        cos45 = np.cos(np.deg2rad(45.0))
        for i, plan in enumerate(plans):
            if i % config.n_directions == 0:
                np.testing.assert_array_equal(plan.direction, [0.0, 0.0, -1.0])
            else:
                assert plan.direction @ np.array([0.0, 0.0, -1.0]) >= cos45 - 1e-12

    def test_too_many_locations_rejected(self):
        config = msm.MsmConfig(grid_n=4, n_locations=10, n_directions=1)
        with pytest.raises(ConfigError, match="interior"):
            msm.build_plans(config, seed=0)

    def test_parallel_workers_match_serial(self):
        config = msm.MsmConfig(grid_n=5, n_locations=2, n_directions=2, n_t=2)
        serial = msm.generate_dataset(config, seed=3, workers=1)
        parallel = msm.generate_dataset(config, seed=3, workers=2)
        for a, b in zip(serial, parallel):
            assert a.location_index == b.location_index
            np.testing.assert_array_equal(a.positions, b.positions)
            np.testing.assert_array_equal(a.velocities, b.velocities)


class TestStabilityInterpretation:
    def test_loaded_equilibrium_internal_force_balances_external(self):
        # At a loaded static state the net force (including the external
        # load) is below the threshold, while the spring system alone carries
        # minus the applied load at the contact.
        config = msm.MsmConfig(grid_n=6)
        rest = msm.build_surface(config)
        loc = msm.grid_index(config, 3, 3)
        ext = np.zeros_like(rest.positions)
        ext[loc, 2] = -0.5
        loaded = msm.make_state(
            positions=rest.positions, velocities=rest.velocities,
            rest_positions=rest.rest_positions, spring_i=rest.spring_i,
            spring_j=rest.spring_j, spring_rest=rest.spring_rest,
            spring_k=rest.spring_k, external_force=ext, config=config,
        )
        final, _ = msm.run_to_stability(loaded, config)
        assert final.max_residual_force() < config.stability_f
        internal = final.net_force - final.external_force
        assert np.linalg.norm(internal[loc]) == pytest.approx(0.5, abs=config.stability_f)
