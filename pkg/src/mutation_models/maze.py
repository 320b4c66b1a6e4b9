"""Binary maze levels, connectivity analysis and the cascading fitness.

Tiles are stored row-major as ``tiles[y, x]`` with ``0`` for empty and ``1``
for solid. Anything outside the grid counts as solid, so the border ring of
the maze is implicit.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage

DEFAULT_WIDTH = 14
DEFAULT_HEIGHT = 14

REGION_CAP = 20
PATH_NORMALIZER = 98

EMPTY_CHAR = "."
SOLID_CHAR = "#"


class TileValue(IntEnum):
    EMPTY = 0
    SOLID = 1


class MutationAction(IntEnum):
    """Integer codes are part of the dataset format; do not renumber."""

    NO_CHANGE = 0
    CHANGE_TO_EMPTY = 1
    CHANGE_TO_SOLID = 2


class Level:
    """Immutable ``height x width`` grid of empty/solid tiles."""

    __slots__ = ("_tiles",)

    def __init__(self, tiles) -> None:
        arr = np.array(tiles, dtype=np.uint8, copy=True)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError(f"tiles must be a non-empty 2D grid, got shape {arr.shape}")
        if np.any(arr > 1):
            raise ValueError("tile values must be 0 (empty) or 1 (solid)")
        arr.flags.writeable = False
        self._tiles = arr

    @classmethod
    def filled(cls, width: int, height: int, value: TileValue) -> "Level":
        _check_dims(width, height)
        return cls(np.full((height, width), int(value), dtype=np.uint8))

    @property
    def tiles(self) -> np.ndarray:
        return self._tiles

    @property
    def width(self) -> int:
        return self._tiles.shape[1]

    @property
    def height(self) -> int:
        return self._tiles.shape[0]

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def tile(self, x: int, y: int) -> TileValue:
        if not self.in_bounds(x, y):
            return TileValue.SOLID
        return TileValue(int(self._tiles[y, x]))

    def empty_count(self) -> int:
        return int(self._tiles.size - np.count_nonzero(self._tiles))

    def to_text(self) -> str:
        rows = ("".join(SOLID_CHAR if t else EMPTY_CHAR for t in row) for row in self._tiles)
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Level":
        lines = [line.rstrip("\r") for line in text.splitlines() if line.strip()]
        if not lines:
            raise ValueError("empty level text")
        width = len(lines[0])
        rows = []
        for lineno, line in enumerate(lines, start=1):
            if len(line) != width:
                raise ValueError(f"line {lineno}: expected {width} tiles, got {len(line)}")
            row = []
            for ch in line:
                if ch == EMPTY_CHAR:
                    row.append(0)
                elif ch == SOLID_CHAR:
                    row.append(1)
                else:
                    raise ValueError(f"line {lineno}: unknown tile character {ch!r}")
            rows.append(row)
        return cls(rows)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "Level":
        return cls.from_text(Path(path).read_text())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Level):
            return NotImplemented
        return self._tiles.shape == other._tiles.shape and bool(np.array_equal(self._tiles, other._tiles))

    def __hash__(self) -> int:
        return hash((self._tiles.shape, self._tiles.tobytes()))

    def __repr__(self) -> str:
        return f"Level({self.width}x{self.height}, empty={self.empty_count()})"


@dataclass(frozen=True)
class FitnessReport:
    regions: int
    longest_path: int
    fitness: float


def _check_dims(width: int, height: int) -> None:
    if width <= 0 or height <= 0:
        raise ValueError(f"level dimensions must be positive, got {width}x{height}")


def new_random_level(
    width: int,
    height: int,
    solid_probability: float,
    rng: np.random.Generator,
) -> Level:
    """Each tile is independently solid with ``solid_probability``."""
    _check_dims(width, height)
    if not 0.0 <= solid_probability <= 1.0:
        raise ValueError(f"solid_probability must be in [0, 1], got {solid_probability}")
    return Level(rng.random((height, width)) < solid_probability)


def count_regions(level: Level) -> int:
    """Number of 4-connected components of empty tiles."""
    return _count_empty_regions(level.tiles)


def _count_empty_regions(tiles: np.ndarray) -> int:
    # ndimage's default structuring element is the 4-neighbourhood
    return int(ndimage.label(tiles == 0)[1])


@numba.njit(cache=True)
def _grid_diameter(flat, height, width):
    n = height * width
    dist = np.empty(n, np.int32)
    queue = np.empty(n, np.int32)
    best = 0
    for source in range(n):
        if flat[source] != 0:
            continue
        for i in range(n):
            dist[i] = -1
        dist[source] = 0
        queue[0] = source
        head = 0
        tail = 1
        while head < tail:
            u = queue[head]
            head += 1
            x = u % width
            d = dist[u] + 1
            v = u - 1
            if x > 0 and flat[v] == 0 and dist[v] < 0:
                dist[v] = d
                queue[tail] = v
                tail += 1
            v = u + 1
            if x < width - 1 and flat[v] == 0 and dist[v] < 0:
                dist[v] = d
                queue[tail] = v
                tail += 1
            v = u - width
            if v >= 0 and flat[v] == 0 and dist[v] < 0:
                dist[v] = d
                queue[tail] = v
                tail += 1
            v = u + width
            if v < n and flat[v] == 0 and dist[v] < 0:
                dist[v] = d
                queue[tail] = v
                tail += 1
        # BFS order is non-decreasing in distance, the last dequeued node is the farthest
        far = dist[queue[tail - 1]]
        if far > best:
            best = far
    return best


def longest_shortest_path(level: Level) -> int:
    """Largest shortest-path distance, in moves, between two connected empty tiles."""
    tiles = np.ascontiguousarray(level.tiles).ravel()
    return int(_grid_diameter(tiles, level.height, level.width))


def cascade_fitness(regions: int, longest_path: int) -> float:
    if 1 < regions < REGION_CAP:
        return 0.5 * (1.0 - regions / REGION_CAP)
    if regions == 1:
        # clamp: paths longer than the normalizer would push fitness past 1
        return min(1.0, 0.5 + 0.5 * (longest_path / PATH_NORMALIZER))
    return 0.0


def evaluate_fitness(level: Level) -> FitnessReport:
    regions = count_regions(level)
    path = longest_shortest_path(level) if regions > 0 else 0
    return FitnessReport(regions, path, cascade_fitness(regions, path))


def apply_action(level: Level, x: int, y: int, action: MutationAction) -> Level:
    """Return a copy of ``level`` with the tile at ``(x, y)`` changed by ``action``."""
    if not level.in_bounds(x, y):
        raise ValueError(f"location ({x}, {y}) outside {level.width}x{level.height} level")
    action = MutationAction(action)
    if action is MutationAction.NO_CHANGE:
        return level
    value = TileValue.EMPTY if action is MutationAction.CHANGE_TO_EMPTY else TileValue.SOLID
    if level.tiles[y, x] == value:
        return level
    tiles = level.tiles.copy()
    tiles[y, x] = value
    return Level(tiles)
