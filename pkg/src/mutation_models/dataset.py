"""Supervised (observation, action) pairs extracted from mutation histories."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .evolution import Chromosome, CorruptHistoryError
from .maze import MutationAction, apply_action
from .policy import DEFAULT_CROP, crop_padded, pad_level

FORMAT_TAG = "mmds"
FORMAT_VERSION = 1


class DatasetParseError(ValueError):
    def __init__(self, path, lineno: int, message: str) -> None:
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


@dataclass
class TrainingDataset:
    """``observations`` is (N, S, S) uint8 with 1 = solid; ``actions`` is (N,) of action codes."""

    observations: np.ndarray
    actions: np.ndarray
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainingDataset):
            return NotImplemented
        return (
            self.provenance == other.provenance
            and self.observations.shape == other.observations.shape
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.actions, other.actions)
        )

    def class_counts(self) -> dict[str, int]:
        counts = Counter(int(a) for a in self.actions)
        return {action.name: counts.get(int(action), 0) for action in MutationAction}

    @classmethod
    def empty(cls, crop_size: int = DEFAULT_CROP, provenance: str = "") -> "TrainingDataset":
        return cls(np.zeros((0, crop_size, crop_size), np.uint8), np.zeros(0, np.int64), provenance)


def extract_dataset(
    chromosomes: Sequence[Chromosome],
    crop_size: int = DEFAULT_CROP,
    provenance: str = "",
) -> TrainingDataset:
    """Replay each history and record the crop seen *before* every step, with its action."""
    observations = []
    actions = []
    for chrom in chromosomes:
        level = chrom.initial_level
        padded = pad_level(level.tiles, crop_size)
        for step, record in enumerate(chrom.history):
            if not level.in_bounds(record.x, record.y):
                raise CorruptHistoryError(
                    f"chromosome {chrom.creation_index}: step {step} location ({record.x}, {record.y}) out of bounds"
                )
            observations.append(crop_padded(padded, record.x, record.y, crop_size).copy())
            actions.append(int(record.action))
            nxt = apply_action(level, record.x, record.y, record.action)
            if nxt is not level:
                level = nxt
                padded = pad_level(level.tiles, crop_size)
        if level != chrom.current_level:
            raise CorruptHistoryError(f"chromosome {chrom.creation_index}: replayed history does not match current level")
    if not observations:
        return TrainingDataset.empty(crop_size, provenance)
    return TrainingDataset(np.stack(observations).astype(np.uint8), np.array(actions, dtype=np.int64), provenance)


def save_dataset(dataset: TrainingDataset, path) -> None:
    """Header line, then one ``<S*S bits> <action>`` record per line."""
    crop = dataset.observations.shape[1] if dataset.observations.ndim == 3 else DEFAULT_CROP
    provenance = dataset.provenance.replace("\n", " ")
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION} crop={crop} provenance={provenance}"]
    for obs, action in zip(dataset.observations, dataset.actions):
        bits = "".join("1" if v else "0" for v in obs.ravel())
        lines.append(f"{bits} {int(action)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> TrainingDataset:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split(" ", 3)
        if len(parts) < 3 or parts[0] != FORMAT_TAG:
            raise DatasetParseError(path, 1, "missing dataset header")
        if parts[1] != str(FORMAT_VERSION):
            raise DatasetParseError(path, 1, f"unsupported dataset version {parts[1]}")
        if not parts[2].startswith("crop="):
            raise DatasetParseError(path, 1, "header lacks crop size")
        try:
            crop = int(parts[2][len("crop="):])
        except ValueError:
            raise DatasetParseError(path, 1, f"bad crop size {parts[2]!r}") from None
        provenance = parts[3][len("provenance="):] if len(parts) == 4 and parts[3].startswith("provenance=") else ""

        observations = []
        actions = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(" ")
            if len(fields) != 2:
                raise DatasetParseError(path, lineno, "expected '<bits> <action>'")
            bits, action = fields
            if len(bits) != crop * crop or set(bits) - {"0", "1"}:
                raise DatasetParseError(path, lineno, f"expected {crop * crop} binary digits")
            if action not in ("0", "1", "2"):
                raise DatasetParseError(path, lineno, f"unknown action {action!r}")
            observations.append(np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0"))
            actions.append(int(action))
    if not observations:
        return TrainingDataset.empty(crop, provenance)
    obs = np.stack(observations).reshape(-1, crop, crop).astype(np.uint8)
    return TrainingDataset(obs, np.array(actions, dtype=np.int64), provenance)
