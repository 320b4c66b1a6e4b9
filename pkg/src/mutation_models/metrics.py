"""Generator quality metrics: success, diversity, iterations, expressive range, history similarity."""
from __future__ import annotations

import csv
import difflib
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Optional, Sequence

import numpy as np

ERA_BIN_WIDTH = 4
ERA_MAX_EMPTY = 196
ERA_MAX_PATH = 195


@dataclass(frozen=True)
class BatchMetrics:
    total: int
    successes: int
    success_rate: float
    diversity: float
    mean_iterations: Optional[float]
    iteration_std: Optional[float]


def compute_batch_metrics(outcomes: Sequence) -> BatchMetrics:
    """Success rate and diversity in percent; diversity and iterations count successes only."""
    if not outcomes:
        raise ValueError("no outcomes to summarise")
    wins = [o for o in outcomes if o.success]
    total = len(outcomes)
    if not wins:
        return BatchMetrics(total, 0, 0.0, 0.0, None, None)
    unique = {(o.path_length, o.empty_tiles) for o in wins}
    iterations = np.array([o.iterations for o in wins], dtype=float)
    std = float(iterations.std(ddof=1)) if len(wins) > 1 else 0.0
    return BatchMetrics(
        total=total,
        successes=len(wins),
        success_rate=100.0 * len(wins) / total,
        diversity=100.0 * len(unique) / len(wins),
        mean_iterations=float(iterations.mean()),
        iteration_std=std,
    )


def ratcliff_obershelp(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Gestalt pattern matching similarity ``2 * matched / (len(a) + len(b))``.

    The longest common block is taken first (earliest in ``a``, then in
    ``b``, on ties) and both flanks are matched recursively. Two empty
    sequences are identical.
    """
    if not a and not b:
        return 1.0
    matcher = difflib.SequenceMatcher(None, a, b, autojunk=False)
    matched = sum(block.size for block in matcher.get_matching_blocks())
    return 2.0 * matched / (len(a) + len(b))


def history_similarity(top: Sequence) -> float:
    """Mean pairwise similarity of mutation histories tokenised as ``(x, y, action)``."""
    if len(top) < 2:
        raise ValueError("history similarity needs at least two chromosomes")
    tokens = [[r.token() for r in c.history] for c in top]
    scores = [ratcliff_obershelp(a, b) for a, b in itertools.combinations(tokens, 2)]
    return float(np.mean(scores))


def mean_ci95(values: Sequence[float]) -> tuple[float, float]:
    """Mean and half-width ``1.96 * s / sqrt(n)`` (0 for a single value)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(1.96 * arr.std(ddof=1) / math.sqrt(arr.size))


# --------------------------------------------------------------------------- expressive range


@dataclass
class ExpressiveRange:
    points: list[tuple[int, int]] = field(default_factory=list)
    grid: np.ndarray = field(default_factory=lambda: _empty_grid())
    bin_width: int = ERA_BIN_WIDTH

    @property
    def empty_edges(self) -> np.ndarray:
        return np.arange(self.grid.shape[0] + 1) * self.bin_width

    @property
    def path_edges(self) -> np.ndarray:
        return np.arange(self.grid.shape[1] + 1) * self.bin_width


def _empty_grid() -> np.ndarray:
    return np.zeros((ERA_MAX_EMPTY // ERA_BIN_WIDTH + 1, ERA_MAX_PATH // ERA_BIN_WIDTH + 1), dtype=np.int64)


def expressive_range(outcomes: Sequence) -> ExpressiveRange:
    """Bin successful levels by (empty tiles, longest path); rows index empty tiles."""
    era = ExpressiveRange()
    for o in outcomes:
        if not o.success:
            continue
        era.points.append((int(o.empty_tiles), int(o.path_length)))
        era.grid[o.empty_tiles // era.bin_width, o.path_length // era.bin_width] += 1
    return era


def emit_era_csv(era: ExpressiveRange, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["empty_tiles", "path_length"])
        writer.writerows(era.points)


def emit_era_svg(era: ExpressiveRange, path, title: str = "expressive range", cell: int = 8) -> None:
    rows, cols = era.grid.shape
    margin = 48
    width = margin + cols * cell + 16
    height = margin + rows * cell + 16
    peak = max(int(era.grid.max()), 1)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="10">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin}" y="14">{title}</text>',
        f'<text x="{margin}" y="{height - 2}">longest path (bin {era.bin_width})</text>',
        f'<text x="10" y="{margin}" transform="rotate(90 10 {margin})">empty tiles (bin {era.bin_width})</text>',
        f'<rect x="{margin}" y="{margin - 16}" width="{cols * cell}" height="{rows * cell}" fill="#f4f4f4" stroke="#999"/>',
    ]
    for (r, c), count in np.ndenumerate(era.grid):
        if not count:
            continue
        shade = int(255 * (1.0 - count / peak))
        out.append(
            f'<rect x="{margin + c * cell}" y="{margin - 16 + r * cell}" width="{cell}" height="{cell}" '
            f'fill="rgb({shade},{shade},255)"><title>empty {r * era.bin_width}-{(r + 1) * era.bin_width - 1}, '
            f"path {c * era.bin_width}-{(c + 1) * era.bin_width - 1}: {count}</title></rect>"
        )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
