"""Square domain geometry: 3x3 partition, cell classification, initial layout.

The simulation box is a square of side ``side_length`` split into nine equal
square cells, indexed 1..9 row-major from the bottom-left corner:

    7 8 9
    4 5 6
    1 2 3

Cells are classified by how many exterior walls they touch: corner cells
(two walls), one-wall cells, and the single center cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

PARTICLE_COUNT = 27
GRID_SIZE = 3
PARTICLES_PER_CELL = 3
DEFAULT_SIDE_LENGTH = 30.0
DEFAULT_SPEED = 8.0
DEFAULT_DT = 0.0125
DEFAULT_STEPS = 200_000
DEFAULT_REALIZATIONS = 6000
DEFAULT_N_STATES = 13
DEFAULT_BASE_SEED = 20250801


class SubdomainKind(str, Enum):
    """Cell type by number of exterior walls touched."""

    CORNER = "corner"
    ONE_WALL = "one_wall"
    CENTER = "center"


CORNER_INDICES = (1, 3, 7, 9)
ONE_WALL_INDICES = (2, 4, 6, 8)
CENTER_INDICES = (5,)

KIND_TO_INDICES = {
    SubdomainKind.CORNER: CORNER_INDICES,
    SubdomainKind.ONE_WALL: ONE_WALL_INDICES,
    SubdomainKind.CENTER: CENTER_INDICES,
}


@dataclass(frozen=True)
class SimConfig:
    """All parameters of one simulation experiment.

    Lengths are normalized so the particle radius satisfies 0 < radius <= 1.
    ``dt * speed`` must stay below one cell width so a particle crosses at
    most one cell boundary per sampling step.
    """

    radius: float
    side_length: float = DEFAULT_SIDE_LENGTH
    speed: float = DEFAULT_SPEED
    dt: float = DEFAULT_DT
    steps: int = DEFAULT_STEPS
    realizations: int = DEFAULT_REALIZATIONS
    n_states: int = DEFAULT_N_STATES
    base_seed: int = DEFAULT_BASE_SEED
    particle_count: int = PARTICLE_COUNT
    grid_size: int = GRID_SIZE

    def __post_init__(self) -> None:
        if not 0.0 < self.radius <= 1.0:
            raise ValueError(f"radius must be in (0, 1], got {self.radius}")
        if self.side_length <= 0.0 or self.speed <= 0.0 or self.dt <= 0.0:
            raise ValueError("side_length, speed and dt must be positive")
        if self.particle_count != PARTICLE_COUNT:
            raise ValueError(f"particle_count is fixed at {PARTICLE_COUNT}")
        if self.grid_size != GRID_SIZE:
            raise ValueError(f"grid_size is fixed at {GRID_SIZE}")
        if self.dt * self.speed >= self.side_length / self.grid_size:
            raise ValueError(
                "dt * speed must be smaller than one cell width "
                f"({self.dt * self.speed} >= {self.side_length / self.grid_size})"
            )
        if not 1 <= self.n_states <= self.particle_count:
            raise ValueError(f"n_states must be in [1, {self.particle_count}]")
        if self.steps < 1 or self.realizations < 1:
            raise ValueError("steps and realizations must be >= 1")

    @property
    def cell_size(self) -> float:
        return self.side_length / self.grid_size

    def grid(self) -> "SubdomainGrid":
        return SubdomainGrid.from_side(self.side_length)


def kind_of(index: int) -> SubdomainKind:
    """Classify subdomain ``index`` (1..9) as corner, one-wall, or center."""
    if not 1 <= index <= 9:
        raise ValueError(f"subdomain index must be in 1..9, got {index}")
    if index in CORNER_INDICES:
        return SubdomainKind.CORNER
    if index == 5:
        return SubdomainKind.CENTER
    return SubdomainKind.ONE_WALL


def adjacency_of(index: int) -> list[int]:
    """Edge-sharing neighbours of subdomain ``index``, ascending."""
    if not 1 <= index <= 9:
        raise ValueError(f"subdomain index must be in 1..9, got {index}")
    row, col = divmod(index - 1, GRID_SIZE)
    neighbours = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        r, c = row + dr, col + dc
        if 0 <= r < GRID_SIZE and 0 <= c < GRID_SIZE:
            neighbours.append(1 + c + GRID_SIZE * r)
    return sorted(neighbours)


@dataclass(frozen=True)
class SubdomainGrid:
    """The 3x3 cell structure of a square of a given side length."""

    side_length: float
    cell_size: float
    index_to_kind: dict[int, SubdomainKind] = field(repr=False)
    adjacency: dict[int, list[int]] = field(repr=False)

    @classmethod
    def from_side(cls, side_length: float) -> "SubdomainGrid":
        if side_length <= 0.0:
            raise ValueError("side_length must be positive")
        return cls(
            side_length=side_length,
            cell_size=side_length / GRID_SIZE,
            index_to_kind={i: kind_of(i) for i in range(1, 10)},
            adjacency={i: adjacency_of(i) for i in range(1, 10)},
        )


def subdomain_of(point, grid: SubdomainGrid) -> int:
    """Index of the cell containing ``point``.

    Cells are half-open along both axes, [k*cell, (k+1)*cell), except that a
    coordinate exactly equal to the outer wall belongs to the last cell, so
    every point of the closed square maps to exactly one index.
    """
    x, y = float(point[0]), float(point[1])
    side = grid.side_length
    if not (0.0 <= x <= side and 0.0 <= y <= side):
        raise ValueError(f"point {(x, y)} outside the [0, {side}]^2 domain")
    col = min(int(x / grid.cell_size), GRID_SIZE - 1)
    row = min(int(y / grid.cell_size), GRID_SIZE - 1)
    return 1 + col + GRID_SIZE * row


@dataclass
class Particle:
    """One disk: center position, velocity, and radius."""

    position: np.ndarray
    velocity: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)


def initial_placement(config: SimConfig) -> np.ndarray:
    """Deterministic starting positions, three disks per cell.

    Each cell holds three centers on its horizontal midline, offset by
    {-cell/4, 0, +cell/4} from the cell center.  With the default geometry
    the minimum center spacing is cell/4 = 2.5 and the wall clearance is
    also 2.5, so the layout is overlap-free for every radius <= 1.  The
    layout does not depend on the radius or on any seed.

    Particle p (0-based) starts in subdomain p // 3 + 1.
    """
    cell = config.cell_size
    offsets = (-cell / 4.0, 0.0, cell / 4.0)
    positions = np.empty((config.particle_count, 2), dtype=float)
    p = 0
    for index in range(1, 10):
        row, col = divmod(index - 1, GRID_SIZE)
        cx = (col + 0.5) * cell
        cy = (row + 0.5) * cell
        for off in offsets:
            positions[p] = (cx + off, cy)
            p += 1

    radius = config.radius
    lo, hi = positions.min(), positions.max()
    if lo < radius or hi > config.side_length - radius:
        raise ValueError("initial layout violates wall clearance for this radius")
    deltas = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((deltas**2).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    if dist.min() < 2.0 * radius:
        raise ValueError("initial layout overlaps for this radius")
    return positions


def type_means(per_subdomain: np.ndarray) -> dict[SubdomainKind, float]:
    """Average a per-subdomain statistic (length 9, index i-1) over each kind."""
    values = np.asarray(per_subdomain, dtype=float)
    if values.shape[-1] != 9:
        raise ValueError("expected 9 per-subdomain values")
    return {
        kind: float(np.mean([values[..., i - 1] for i in indices]))
        for kind, indices in KIND_TO_INDICES.items()
    }
