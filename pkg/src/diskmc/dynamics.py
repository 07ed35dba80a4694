"""Elastic hard-disk dynamics: exact event-driven motion sampled on a dt grid.

Collisions are resolved in exact continuous time, in nondecreasing order,
with equal-mass elastic exchange along the contact normal for disk-disk
events and specular reflection for disk-wall events.  Both conserve kinetic
energy to machine precision, which makes the conservation invariants
directly testable.

Two execution paths exist: the scalar operations plus :func:`advance_to`
form a plain-Python reference used by the tests, and
:func:`simulate_realization` drives the compiled kernel in
:mod:`diskmc._kernel` for production runs (about three orders of magnitude
faster).  Both follow the same event ordering rules.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from diskmc import _kernel
from diskmc.domain import GRID_SIZE, Particle, SimConfig, initial_placement

EPS_GEOM = 1e-9
MAX_EVENTS_PER_STEP = 1_000_000


class Wall(IntEnum):
    LEFT = _kernel.WALL_LEFT
    RIGHT = _kernel.WALL_RIGHT
    BOTTOM = _kernel.WALL_BOTTOM
    TOP = _kernel.WALL_TOP


class SimulationStuckError(RuntimeError):
    """A single sampling step needed more than MAX_EVENTS_PER_STEP events."""


@dataclass
class SystemState:
    """Positions and velocities of all disks at one instant."""

    time: float
    positions: np.ndarray  # (n, 2)
    velocities: np.ndarray  # (n, 2)
    radius: float
    side_length: float

    def copy(self) -> "SystemState":
        return replace(self, positions=self.positions.copy(),
                       velocities=self.velocities.copy())

    def particle(self, i: int) -> Particle:
        return Particle(self.positions[i].copy(), self.velocities[i].copy(),
                        self.radius)

    def kinetic_energy(self) -> float:
        return float(0.5 * np.sum(self.velocities**2))

    def max_pair_penetration(self) -> float:
        """Largest amount by which two centers are closer than 2R (<= 0 if none)."""
        deltas = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.sqrt((deltas**2).sum(axis=-1))
        np.fill_diagonal(dist, np.inf)
        return float(2.0 * self.radius - dist.min())

    def max_wall_violation(self) -> float:
        """Largest excursion of a center outside [R, side - R] (<= 0 if none)."""
        lo = self.radius - self.positions.min()
        hi = self.positions.max() - (self.side_length - self.radius)
        return float(max(lo, hi))


@dataclass(frozen=True)
class CollisionEvent:
    """A predicted collision: wall events carry a Wall, pair events a partner."""

    time: float
    particle: int
    wall: Wall | None = None
    partner: int | None = None

    @property
    def is_pair(self) -> bool:
        return self.partner is not None

    def sort_key(self):
        # Deterministic tie order: time, walls before pairs, then indices.
        second = self.partner if self.is_pair else -1
        return (self.time, int(self.is_pair), self.particle, second)


def time_to_wall(p: Particle, side_length: float):
    """Earliest (time, Wall) at which the center reaches a wall contact line.

    Returns None when no velocity component points toward any wall.  A
    particle already on a contact line and moving toward it yields time 0.
    """
    t, which = _kernel._predict_wall(
        p.position[0], p.position[1], p.velocity[0], p.velocity[1],
        0.0, p.radius, side_length - p.radius,
    )
    if which == _kernel.WALL_NONE:
        return None
    return t, Wall(which)


def time_to_pair(a: Particle, b: Particle):
    """Time until disks a and b touch, or None.

    Only approaching pairs collide; a pair already overlapping by rounding
    error collides immediately (time 0).
    """
    r = np.array([a.position, b.position])
    v = np.array([a.velocity, b.velocity])
    t = _kernel._predict_pair(r, v, 0, 1, 0.0, 4.0 * a.radius * a.radius)
    return None if t >= _kernel.HUGE else t


def resolve_wall(p: Particle, wall: Wall) -> Particle:
    """Specular reflection: negate the normal velocity component."""
    v = p.velocity.copy()
    axis = 0 if wall in (Wall.LEFT, Wall.RIGHT) else 1
    v[axis] = -v[axis]
    return Particle(p.position.copy(), v, p.radius)


def resolve_pair(a: Particle, b: Particle) -> tuple[Particle, Particle]:
    """Equal-mass elastic exchange along the contact normal.

    With n pointing from a to b and s = (v_a - v_b) . n, the normal velocity
    components are exchanged: v_a' = v_a - s n, v_b' = v_b + s n.  Momentum
    is conserved exactly; kinetic energy to rounding in |n|.
    """
    d = b.position - a.position
    n = d / np.sqrt(d @ d)
    s = (a.velocity - b.velocity) @ n
    return (
        Particle(a.position.copy(), a.velocity - s * n, a.radius),
        Particle(b.position.copy(), b.velocity + s * n, b.radius),
    )


def _pending_events(state: SystemState) -> list[CollisionEvent]:
    # Calls the kernel predictors on the raw arrays; building a Particle per
    # pair would dominate the cost of the reference path.
    n = len(state.positions)
    r, v = state.positions, state.velocities
    lo, hi = state.radius, state.side_length - state.radius
    four_r2 = 4.0 * state.radius * state.radius
    events = []
    for i in range(n):
        t, which = _kernel._predict_wall(r[i, 0], r[i, 1], v[i, 0], v[i, 1],
                                         state.time, lo, hi)
        if which != _kernel.WALL_NONE:
            events.append(CollisionEvent(t, i, wall=Wall(which)))
    for i in range(n):
        for j in range(i + 1, n):
            t = _kernel._predict_pair(r, v, i, j, state.time, four_r2)
            if t < _kernel.HUGE:
                events.append(CollisionEvent(t, i, partner=j))
    return events


def advance_to(state: SystemState, t_target: float) -> SystemState:
    """Advance exactly to ``t_target``, resolving every event on the way.

    Reference implementation: re-predicts all events from scratch after each
    resolution.  O(n^2) per event, intended for tests and small horizons;
    production runs go through :func:`simulate_realization`.
    """
    if t_target < state.time:
        raise ValueError("t_target must not precede the current state time")
    out = state.copy()
    lo = out.radius
    hi = out.side_length - out.radius
    events_done = 0
    while True:
        pending = _pending_events(out)
        nxt = min(pending, key=CollisionEvent.sort_key, default=None)
        if nxt is None or nxt.time > t_target:
            break
        events_done += 1
        if events_done > MAX_EVENTS_PER_STEP:
            raise SimulationStuckError(
                f"more than {MAX_EVENTS_PER_STEP} events before t={t_target}"
            )
        out.positions += out.velocities * (nxt.time - out.time)
        out.time = nxt.time
        if nxt.is_pair:
            a, b = resolve_pair(out.particle(nxt.particle), out.particle(nxt.partner))
            out.velocities[nxt.particle] = a.velocity
            out.velocities[nxt.partner] = b.velocity
        else:
            out.velocities[nxt.particle] = resolve_wall(
                out.particle(nxt.particle), nxt.wall
            ).velocity
            axis = 0 if nxt.wall in (Wall.LEFT, Wall.RIGHT) else 1
            out.positions[nxt.particle, axis] = lo if nxt.wall in (Wall.LEFT, Wall.BOTTOM) else hi
    out.positions += out.velocities * (t_target - out.time)
    out.time = t_target
    return out


def initial_state(config: SimConfig, realization_seed) -> SystemState:
    """Fixed layout with random velocity directions at the configured speed.

    ``realization_seed`` feeds numpy's seed-sequence machinery, so any int
    or tuple of ints gives an independent, reproducible direction stream.
    """
    rng = np.random.default_rng(realization_seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=config.particle_count)
    velocities = config.speed * np.column_stack([np.cos(angles), np.sin(angles)])
    return SystemState(
        time=0.0,
        positions=initial_placement(config),
        velocities=velocities,
        radius=config.radius,
        side_length=config.side_length,
    )


@dataclass
class RealizationRecord:
    """Occupancy series of one realization plus conservation diagnostics."""

    occupancy: np.ndarray  # (steps+1, 9) int8
    energy_start: float
    energy_end: float
    max_pair_penetration: float
    max_wall_violation: float
    wall_events: int
    pair_events: int
    max_events_per_step: int
    final_state: SystemState

    @property
    def energy_drift(self) -> float:
        return abs(self.energy_end - self.energy_start) / self.energy_start


def _classify_all(state: SystemState) -> np.ndarray:
    inv_cell = GRID_SIZE / state.side_length
    cx = np.minimum((state.positions[:, 0] * inv_cell).astype(int), GRID_SIZE - 1)
    cy = np.minimum((state.positions[:, 1] * inv_cell).astype(int), GRID_SIZE - 1)
    return np.bincount(cx + GRID_SIZE * cy, minlength=9).astype(np.int8)


def simulate_realization(config: SimConfig, realization_seed, *,
                         use_kernel: bool = True,
                         audit_stride: int = 0) -> RealizationRecord:
    """Run one realization of ``config.steps`` sampling steps.

    ``audit_stride`` > 0 additionally measures pair/wall penetration at every
    audit_stride-th sample (the containment and no-overlap invariants).
    """
    state = initial_state(config, realization_seed)
    if use_kernel:
        r = state.positions.copy()
        v = state.velocities.copy()
        occupancy, stats, counts, status = _kernel.run_kernel(
            r, v, config.radius, config.side_length, config.dt, config.steps,
            audit_stride, MAX_EVENTS_PER_STEP,
        )
        if status == _kernel.STATUS_EVENT_OVERFLOW:
            raise SimulationStuckError(
                f"more than {MAX_EVENTS_PER_STEP} events in one sampling step"
            )
        final = SystemState(config.steps * config.dt, r, v,
                            config.radius, config.side_length)
        return RealizationRecord(
            occupancy=occupancy,
            energy_start=float(stats[0]),
            energy_end=float(stats[1]),
            max_pair_penetration=float(stats[2]),
            max_wall_violation=float(stats[3]),
            wall_events=int(counts[0]),
            pair_events=int(counts[1]),
            max_events_per_step=int(counts[2]),
            final_state=final,
        )

    occupancy = np.zeros((config.steps + 1, 9), dtype=np.int8)
    occupancy[0] = _classify_all(state)
    e0 = state.kinetic_energy()
    max_pen = 0.0
    max_wall = 0.0
    for k in range(1, config.steps + 1):
        state = advance_to(state, k * config.dt)
        occupancy[k] = _classify_all(state)
        if audit_stride > 0 and k % audit_stride == 0:
            max_pen = max(max_pen, state.max_pair_penetration())
            max_wall = max(max_wall, state.max_wall_violation())
    return RealizationRecord(
        occupancy=occupancy,
        energy_start=e0,
        energy_end=state.kinetic_energy(),
        max_pair_penetration=max_pen,
        max_wall_violation=max_wall,
        wall_events=-1,
        pair_events=-1,
        max_events_per_step=-1,
        final_state=state,
    )


def run_realization(config: SimConfig, realization_seed, *,
                    use_kernel: bool = True) -> np.ndarray:
    """Occupancy series of one realization: shape (steps+1, 9), row k is t_k."""
    return simulate_realization(config, realization_seed,
                                use_kernel=use_kernel).occupancy
