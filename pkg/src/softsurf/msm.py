"""Mass-spring surface simulator: triangulated grid, force ramps, damped
semi-implicit Euler integration to static equilibrium.

The integrator works in SI units (metres, kilograms, newtons); configuration
lengths and emitted deformation runs are in millimetres. Each mass is tied to
its rest position by a fixed spring, which anchors the sheet without pinning
any point.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from multiprocessing import Pool, get_context
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from softsurf.core import make_rng, sample_unit_direction_in_cone
from softsurf.errors import ConfigError, DivergenceError

MM_PER_M = 1000.0

# Indentation presses into the sheet, along the downward surface normal.
SURFACE_NORMAL = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class MsmConfig:
    side_length: float = 100.0  # mm
    grid_n: int = 32
    mass: float = 0.00016  # kg
    damping: float = 0.1  # N*s/m, global viscous drag
    dt: float = 0.0001  # s
    k_between: float = 100.0  # N/m
    k_fixed: float = 21.0  # N/m
    f_max: float = 7.5  # N
    n_t: int = 15
    n_n: int = 1
    n_directions: int = 11
    n_locations: int = 100
    cone_half_angle_deg: float = 45.0
    stability_v: float = 0.02  # m/s
    stability_f: float = 0.02  # N
    max_steps_per_state: int = 2_000_000

    def validate(self):
        positive = (
            "side_length", "mass", "damping", "dt", "k_between", "k_fixed",
            "f_max", "stability_v", "stability_f",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.grid_n < 2:
            raise ConfigError(f"grid_n must be >= 2, got {self.grid_n}")
        if self.n_t < 1:
            raise ConfigError(f"n_t must be >= 1, got {self.n_t}")
        if self.n_n < 1:
            raise ConfigError(f"n_n must be >= 1, got {self.n_n}")
        if self.n_directions < 1:
            raise ConfigError(f"n_directions must be >= 1, got {self.n_directions}")
        if self.n_locations < 1:
            raise ConfigError(f"n_locations must be >= 1, got {self.n_locations}")
        if not 0 < self.cone_half_angle_deg <= 90:
            raise ConfigError(
                f"cone_half_angle_deg must be in (0, 90], got {self.cone_half_angle_deg}"
            )
        if self.max_steps_per_state < 1:
            raise ConfigError("max_steps_per_state must be >= 1")

    @property
    def n_points(self) -> int:
        return self.grid_n * self.grid_n


@dataclass
class MsmState:
    """Simulator state in SI units. Treat as immutable once constructed."""

    positions: np.ndarray  # (N, 3) m
    velocities: np.ndarray  # (N, 3) m/s
    rest_positions: np.ndarray  # (N, 3) m
    spring_i: np.ndarray  # (S,)
    spring_j: np.ndarray  # (S,)
    spring_rest: np.ndarray  # (S,) m
    spring_k: np.ndarray  # (S,) N/m
    external_force: np.ndarray  # (N, 3) N
    net_force: np.ndarray  # (N, 3) N, consistent with the fields above
    incidence: sp.csr_matrix  # (N, S) signed spring-endpoint incidence

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    def max_speed(self) -> float:
        return float(np.sqrt(np.max(np.einsum("ij,ij->i", self.velocities, self.velocities))))

    def max_residual_force(self) -> float:
        return float(np.sqrt(np.max(np.einsum("ij,ij->i", self.net_force, self.net_force))))


def _spring_incidence(n: int, spring_i: np.ndarray, spring_j: np.ndarray) -> sp.csr_matrix:
    s = len(spring_i)
    rows = np.concatenate([spring_i, spring_j])
    cols = np.concatenate([np.arange(s), np.arange(s)])
    vals = np.concatenate([np.ones(s), -np.ones(s)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, s))


def _compute_net_force(
    positions: np.ndarray,
    velocities: np.ndarray,
    rest_positions: np.ndarray,
    spring_i: np.ndarray,
    spring_j: np.ndarray,
    spring_rest: np.ndarray,
    spring_k: np.ndarray,
    external_force: np.ndarray,
    incidence: sp.csr_matrix,
    damping: float,
    k_fixed: float,
) -> np.ndarray:
    if len(spring_i):
        d = positions[spring_i] - positions[spring_j]
        lens = np.sqrt(np.einsum("ij,ij->i", d, d))
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(lens > 0.0, (lens - spring_rest) / lens, 0.0)
        per_spring = d * (-spring_k * scale)[:, None]
        net = incidence @ per_spring
    else:
        net = np.zeros_like(positions)
    net += -k_fixed * (positions - rest_positions)
    net += -damping * velocities
    net += external_force
    return net


def make_state(
    positions,
    velocities,
    rest_positions,
    spring_i,
    spring_j,
    spring_rest,
    spring_k,
    external_force,
    config: MsmConfig,
    incidence: sp.csr_matrix | None = None,
) -> MsmState:
    """Assemble a state and fill its net-force cache."""
    positions = np.asarray(positions, dtype=np.float64)
    velocities = np.asarray(velocities, dtype=np.float64)
    rest_positions = np.asarray(rest_positions, dtype=np.float64)
    spring_i = np.asarray(spring_i, dtype=np.int64)
    spring_j = np.asarray(spring_j, dtype=np.int64)
    spring_rest = np.asarray(spring_rest, dtype=np.float64)
    spring_k = np.asarray(spring_k, dtype=np.float64)
    external_force = np.asarray(external_force, dtype=np.float64)

    n = positions.shape[0]
    if len(spring_i):
        if spring_i.min() < 0 or spring_i.max() >= n or spring_j.min() < 0 or spring_j.max() >= n:
            raise ValueError("spring endpoint index out of range")
        if np.any(spring_i == spring_j):
            raise ValueError("spring connects a mass to itself")
        if np.any(spring_rest <= 0):
            raise ValueError("spring rest lengths must be positive")
    if incidence is None:
        incidence = _spring_incidence(n, spring_i, spring_j)
    net = _compute_net_force(
        positions, velocities, rest_positions, spring_i, spring_j,
        spring_rest, spring_k, external_force, incidence,
        config.damping, config.k_fixed,
    )
    return MsmState(
        positions=positions, velocities=velocities, rest_positions=rest_positions,
        spring_i=spring_i, spring_j=spring_j, spring_rest=spring_rest,
        spring_k=spring_k, external_force=external_force, net_force=net,
        incidence=incidence,
    )


def grid_index(config: MsmConfig, row: int, col: int) -> int:
    return row * config.grid_n + col


def build_surface(config: MsmConfig) -> MsmState:
    """Rest-state triangulated grid: axis-aligned springs plus one uniform
    diagonal per cell, all at their geometric rest lengths."""
    config.validate()
    n = config.grid_n
    side_m = config.side_length / MM_PER_M
    lin = np.linspace(0.0, side_m, n)
    xx, yy = np.meshgrid(lin, lin, indexing="ij")
    positions = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(n * n)])

    si, sj = [], []
    for i in range(n):
        for j in range(n):
            a = grid_index(config, i, j)
            if j + 1 < n:
                si.append(a); sj.append(grid_index(config, i, j + 1))
            if i + 1 < n:
                si.append(a); sj.append(grid_index(config, i + 1, j))
            if i + 1 < n and j + 1 < n:
                si.append(a); sj.append(grid_index(config, i + 1, j + 1))
    spring_i = np.array(si, dtype=np.int64)
    spring_j = np.array(sj, dtype=np.int64)
    rest = np.linalg.norm(positions[spring_i] - positions[spring_j], axis=1)
    spring_k = np.full(len(spring_i), config.k_between, dtype=np.float64)

    return make_state(
        positions=positions,
        velocities=np.zeros_like(positions),
        rest_positions=positions.copy(),
        spring_i=spring_i, spring_j=spring_j, spring_rest=rest, spring_k=spring_k,
        external_force=np.zeros_like(positions),
        config=config,
    )


def net_forces(state: MsmState, config: MsmConfig) -> np.ndarray:
    """Total force on each mass: springs, rest anchors, damping, external."""
    if not np.all(np.isfinite(state.positions)):
        bad = int(np.nonzero(~np.isfinite(state.positions).all(axis=1))[0][0])
        raise DivergenceError(f"non-finite position at mass {bad}")
    return _compute_net_force(
        state.positions, state.velocities, state.rest_positions,
        state.spring_i, state.spring_j, state.spring_rest, state.spring_k,
        state.external_force, state.incidence, config.damping, config.k_fixed,
    )


def step(state: MsmState, config: MsmConfig) -> MsmState:
    """One semi-implicit Euler step: v += F/m*dt, then p += v*dt."""
    v_new = state.velocities + state.net_force * (config.dt / config.mass)
    p_new = state.positions + v_new * config.dt
    if not np.all(np.isfinite(p_new)):
        bad = int(np.nonzero(~np.isfinite(p_new).all(axis=1))[0][0])
        raise DivergenceError(
            f"simulation blew up: non-finite position at mass {bad} "
            f"(dt={config.dt}, k_between={config.k_between})"
        )
    net = _compute_net_force(
        p_new, v_new, state.rest_positions,
        state.spring_i, state.spring_j, state.spring_rest, state.spring_k,
        state.external_force, state.incidence, config.damping, config.k_fixed,
    )
    return MsmState(
        positions=p_new, velocities=v_new, rest_positions=state.rest_positions,
        spring_i=state.spring_i, spring_j=state.spring_j,
        spring_rest=state.spring_rest, spring_k=state.spring_k,
        external_force=state.external_force, net_force=net,
        incidence=state.incidence,
    )


def _is_stable(state: MsmState, config: MsmConfig) -> bool:
    v2 = np.max(np.einsum("ij,ij->i", state.velocities, state.velocities))
    if v2 >= config.stability_v**2:
        return False
    f2 = np.max(np.einsum("ij,ij->i", state.net_force, state.net_force))
    return bool(f2 < config.stability_f**2)


def run_to_stability(state: MsmState, config: MsmConfig) -> tuple[MsmState, int]:
    """Integrate until every mass is below the velocity and residual-force
    thresholds; returns the static state and the number of steps taken."""
    steps = 0
    while not _is_stable(state, config):
        if steps >= config.max_steps_per_state:
            raise DivergenceError(
                f"no static equilibrium within {config.max_steps_per_state} steps "
                f"(max speed {state.max_speed():.3g} m/s, "
                f"max residual {state.max_residual_force():.3g} N)"
            )
        state = step(state, config)
        steps += 1
    return state, steps


def force_schedule(config: MsmConfig) -> np.ndarray:
    """Ramp magnitudes F_t = t * F_max / (n_t * n_n) for t = 1..n_t."""
    config.validate()
    t = np.arange(1, config.n_t + 1, dtype=np.float64)
    return t * (config.f_max / (config.n_t * config.n_n))


@dataclass(frozen=True)
class IndentationPlan:
    """A ramped point load: where, in which direction, and how hard."""

    location_index: int
    direction: np.ndarray  # unit vector
    magnitudes: np.ndarray  # (n_t,) N, strictly increasing

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3,) or not np.isclose(np.linalg.norm(d), 1.0, atol=1e-9):
            raise ValueError(f"direction must be a unit 3-vector, got {d!r}")
        object.__setattr__(self, "direction", d)
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        if len(mags) < 1 or np.any(np.diff(mags) <= 0) or mags[0] <= 0:
            raise ValueError("force magnitudes must be positive and strictly increasing")
        object.__setattr__(self, "magnitudes", mags)


def indent(
    state: MsmState, plan: IndentationPlan, config: MsmConfig
) -> list[tuple[MsmState, float]]:
    """Quasi-static ramp: each force level starts from the previous static
    state. Returns n_t + 1 (state, applied force) pairs, the rest state first."""
    if plan.location_index < 0 or plan.location_index >= state.n_points:
        raise ValueError(f"location index {plan.location_index} out of range")
    out = [(state, 0.0)]
    current = state
    for f_t in plan.magnitudes:
        ext = np.zeros_like(state.positions)
        ext[plan.location_index] = f_t * plan.direction
        loaded = make_state(
            positions=current.positions, velocities=current.velocities,
            rest_positions=current.rest_positions,
            spring_i=current.spring_i, spring_j=current.spring_j,
            spring_rest=current.spring_rest, spring_k=current.spring_k,
            external_force=ext, config=config, incidence=current.incidence,
        )
        current, _ = run_to_stability(loaded, config)
        out.append((current, float(f_t)))
    return out


@dataclass(frozen=True)
class IndentationRun:
    """One simulated ramp in millimetres, ready for storage and training."""

    location_index: int
    direction_index: int
    direction: np.ndarray  # unit vector
    forces: np.ndarray  # (n_t + 1,) N, forces[0] == 0
    positions: np.ndarray  # (n_t + 1, N, 3) mm
    velocities: np.ndarray  # (n_t + 1, N, 3) mm/s

    @property
    def n_states(self) -> int:
        return len(self.forces)

    @property
    def n_points(self) -> int:
        return self.positions.shape[1]


def _pack_run(
    location_index: int,
    direction_index: int,
    direction: np.ndarray,
    states: list[tuple[MsmState, float]],
) -> IndentationRun:
    return IndentationRun(
        location_index=location_index,
        direction_index=direction_index,
        direction=np.asarray(direction, dtype=np.float64),
        forces=np.array([f for _, f in states], dtype=np.float64),
        positions=np.stack([s.positions for s, _ in states]) * MM_PER_M,
        velocities=np.stack([s.velocities for s, _ in states]) * MM_PER_M,
    )


def interior_indices(config: MsmConfig) -> np.ndarray:
    """Grid indices excluding the outermost ring (candidate contact points)."""
    n = config.grid_n
    if n < 3:
        return np.array([], dtype=np.int64)
    rows, cols = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    return (rows * n + cols).ravel().astype(np.int64)


def build_plans(config: MsmConfig, seed: int) -> list[IndentationPlan]:
    """All (location, direction) indentation plans for a dataset, drawn from a
    single seeded stream: locations without replacement from the grid interior,
    then per location the surface normal plus cone-sampled directions."""
    config.validate()
    interior = interior_indices(config)
    if len(interior) < config.n_locations:
        raise ConfigError(
            f"n_locations={config.n_locations} exceeds the {len(interior)} "
            f"interior grid points of a {config.grid_n}x{config.grid_n} grid"
        )
    rng = make_rng(seed)
    locations = rng.choice(interior, size=config.n_locations, replace=False)
    mags = force_schedule(config)
    plans = []
    for loc in locations:
        for d in range(config.n_directions):
            if d == 0:
                direction = SURFACE_NORMAL.copy()
            else:
                direction = sample_unit_direction_in_cone(
                    rng, SURFACE_NORMAL, config.cone_half_angle_deg
                )
            plans.append(
                IndentationPlan(location_index=int(loc), direction=direction, magnitudes=mags)
            )
    return plans


def _integrate_plan(args) -> IndentationRun:
    config, plan, direction_index = args
    rest = build_surface(config)
    states = indent(rest, plan, config)
    return _pack_run(plan.location_index, direction_index, plan.direction, states)


def iter_dataset(
    config: MsmConfig, seed: int, workers: int = 1
) -> Iterator[IndentationRun]:
    """Yield indentation runs in plan order (location draw order, then
    direction index). The output is independent of ``workers``."""
    plans = build_plans(config, seed)
    jobs = [
        (config, plan, i % config.n_directions) for i, plan in enumerate(plans)
    ]
    if workers <= 1:
        rest = build_surface(config)
        for config_, plan, d_idx in jobs:
            states = indent(rest, plan, config_)
            yield _pack_run(plan.location_index, d_idx, plan.direction, states)
    else:
        with get_context("spawn").Pool(workers) as pool:
            yield from pool.imap(_integrate_plan, jobs, chunksize=1)


def generate_dataset(config: MsmConfig, seed: int, workers: int = 1) -> list[IndentationRun]:
    return list(iter_dataset(config, seed, workers=workers))
