"""Fitness-free level generation: scanline passes of policy-sampled edits over noise.

Only the connectivity check from the maze module is used here; the fitness
function is deliberately unreachable from this module.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .maze import (
    DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
    Level,
    _count_empty_regions,
    count_regions,
    longest_shortest_path,
    new_random_level,
)
from .policy import PolicyWeights, crop_offset, probabilities_single, single_kernel_args

DEFAULT_MAX_PASSES = 196
DEFAULT_NOISE = 0.5


@dataclass(frozen=True)
class GenerationOutcome:
    final_level: Level
    success: bool
    iterations: int
    path_length: Optional[int]
    empty_tiles: Optional[int]
    wall_time_ms: float = 0.0


class CachedPolicy:
    """Memoises action probabilities per observation.

    Every miss is evaluated as a single observation, so the probabilities never
    depend on which observations were seen before.
    """

    def __init__(self, weights: PolicyWeights, max_entries: int = 500_000) -> None:
        self.weights = weights
        self.max_entries = max_entries
        self._args = single_kernel_args(weights)
        self._table: dict[bytes, np.ndarray] = {}

    def probabilities(self, obs: np.ndarray) -> np.ndarray:
        key = obs.tobytes()
        probs = self._table.get(key)
        if probs is None:
            if len(self._table) >= self.max_entries:
                self._table.clear()
            probs = probabilities_single(self._args, obs)
            self._table[key] = probs
        return probs


def generate_level(
    weights: PolicyWeights,
    rng: np.random.Generator,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    noise: float = DEFAULT_NOISE,
    max_passes: int = DEFAULT_MAX_PASSES,
    policy: Optional[CachedPolicy] = None,
) -> GenerationOutcome:
    """Run scanline passes from a noise level until all empty tiles connect.

    ``iterations`` is the 1-based pass during which the level became
    connected, 0 if the noise already was, and ``max_passes`` on failure.
    """
    started = time.perf_counter()
    policy = policy or CachedPolicy(weights)
    crop = weights.crop_size
    off = crop_offset(crop)
    start = new_random_level(width, height, noise, rng)

    # solid margin of width `crop` so every window is a plain slice
    padded = np.ones((height + 2 * crop, width + 2 * crop), dtype=np.uint8)
    padded[crop : crop + height, crop : crop + width] = start.tiles
    tiles = padded[crop : crop + height, crop : crop + width]

    def finish(success: bool, iterations: int) -> GenerationOutcome:
        level = Level(tiles)
        elapsed = (time.perf_counter() - started) * 1000.0
        if not success:
            return GenerationOutcome(level, False, iterations, None, None, elapsed)
        return GenerationOutcome(level, True, iterations, longest_shortest_path(level), level.empty_count(), elapsed)

    if count_regions(start) == 1:
        return finish(True, 0)

    for pass_number in range(1, max_passes + 1):
        for y in range(height):
            top = y + crop - off
            for x in range(width):
                left = x + crop - off
                probs = policy.probabilities(padded[top : top + crop, left : left + crop])
                u = rng.random()
                if u < probs[0]:
                    continue
                new_value = 0 if u < probs[0] + probs[1] else 1
                if tiles[y, x] == new_value:
                    continue
                tiles[y, x] = new_value
                if _count_empty_regions(tiles) == 1:
                    return finish(True, pass_number)
    return finish(False, max_passes)


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for episode ``index`` of a batch seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _episodes(args) -> list[GenerationOutcome]:
    weights, seed, indices, kwargs = args
    policy = CachedPolicy(weights)
    return [generate_level(weights, episode_rng(seed, i), policy=policy, **kwargs) for i in indices]


def batch_generate(weights: PolicyWeights, n: int, seed: int, workers: int = 1, **kwargs) -> list[GenerationOutcome]:
    """``n`` episodes on per-episode streams; the result does not depend on ``workers``."""
    if n <= 0:
        raise ValueError("n must be positive")
    if workers <= 1:
        return _episodes((weights, seed, range(n), kwargs))
    chunks = [range(i, n, workers) for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_episodes, [(weights, seed, chunk, kwargs) for chunk in chunks]))
    outcomes: list[Optional[GenerationOutcome]] = [None] * n
    for chunk, part in zip(chunks, parts):
        for i, outcome in zip(chunk, part):
            outcomes[i] = outcome
    return outcomes  # type: ignore[return-value]
