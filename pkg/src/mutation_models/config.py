"""Experiment configuration: an INI file whose keys default to the published setup."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .evolution import EvolutionConfig, Mode
from .inference import DEFAULT_MAX_PASSES
from .policy import DEFAULT_CROP, TrainHyperparams

QUICK_GENERATIONS = 300


class ConfigError(ValueError):
    """Invalid configuration; ``lineno`` points at the offending line when known."""

    def __init__(self, message: str, path=None, lineno: Optional[int] = None) -> None:
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: Mode = Mode.ASSISTED
    epochs: int = 2
    runs: int = 3
    inference_levels: int = 100
    max_passes: int = DEFAULT_MAX_PASSES
    crop_size: int = DEFAULT_CROP
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    training: TrainHyperparams = field(default_factory=TrainHyperparams)

    def __post_init__(self) -> None:
        # the experiment's epoch count is the one the model is trained with
        if self.training.epochs != self.epochs:
            object.__setattr__(self, "training", replace(self.training, epochs=self.epochs))
        if self.epochs < 1 or self.runs < 1 or self.inference_levels < 1 or self.max_passes < 1:
            raise ValueError("epochs, runs, inference_levels and max_passes must be positive")
        if self.crop_size < 4 or self.crop_size % 4:
            raise ValueError("crop_size must be a positive multiple of 4")

    @property
    def label(self) -> str:
        return f"{self.mode.value}-{self.epochs}"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, evolution=replace(self.evolution, seed=seed), training=replace(self.training, seed=seed))

    def scaled(self, scale: str) -> "ExperimentConfig":
        if scale == "full":
            return self
        if scale != "quick":
            raise ValueError(f"unknown scale {scale!r}")
        gens = min(self.evolution.generations, QUICK_GENERATIONS)
        evo = replace(self.evolution, generations=gens, train_interval=min(self.evolution.train_interval, gens))
        return replace(self, evolution=evo, runs=1)

    def as_dict(self) -> dict:
        evo = self.evolution
        tr = self.training
        return {
            "experiment": {
                "mode": self.mode.value,
                "epochs": self.epochs,
                "runs": self.runs,
                "inference_levels": self.inference_levels,
                "max_passes": self.max_passes,
                "crop_size": self.crop_size,
            },
            "evolution": {
                "mu": evo.mu,
                "lambda": evo.lam,
                "generations": evo.generations,
                "top_x": evo.top_x,
                "train_interval": evo.train_interval,
                "random_action_chance": evo.random_action_chance,
                "noise": evo.noise,
                "width": evo.width,
                "height": evo.height,
                "seed": evo.seed,
                "prefer_offspring": evo.prefer_offspring,
            },
            "training": {
                "learning_rate": tr.learning_rate,
                "batch_size": tr.batch_size,
                "seed": tr.seed,
            },
        }


def preset(name: str) -> ExperimentConfig:
    """Named experiment presets: ``assisted-2`` and ``normal-2/4/8``."""
    try:
        mode, epochs = name.lower().split("-")
        return ExperimentConfig(mode=Mode(mode), epochs=int(epochs))
    except ValueError:
        raise ValueError(f"unknown preset {name!r}") from None


_SCHEMA = {
    "experiment": {"mode": str, "epochs": int, "runs": int, "inference_levels": int, "max_passes": int, "crop_size": int},
    "evolution": {
        "mu": int,
        "lambda": int,
        "generations": int,
        "top_x": int,
        "train_interval": int,
        "random_action_chance": float,
        "noise": float,
        "width": int,
        "height": int,
        "seed": int,
        "prefer_offspring": bool,
    },
    "training": {"learning_rate": float, "batch_size": int, "seed": int},
}

_EVOLUTION_FIELDS = {"lambda": "lam"}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to its 1-based line number for error reporting."""
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
        elif section is not None:
            for sep in "=:":
                if sep in line:
                    lines[(section, line.split(sep, 1)[0].strip().lower())] = n
                    break
    return lines


def parse_config(text: str, path="<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", path, lineno) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from None

    lines = _key_lines(text)
    values: dict[str, dict] = {s: {} for s in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", path, _section_line(text, section))
        for key, raw in parser.items(section):
            kind = _SCHEMA[section].get(key)
            lineno = lines.get((section, key))
            if kind is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]", path, lineno)
            try:
                if kind is bool:
                    values[section][key] = parser.getboolean(section, key)
                else:
                    values[section][key] = kind(raw)
            except ValueError:
                raise ConfigError(f"{section}.{key}: cannot read {raw!r} as {kind.__name__}", path, lineno) from None

    def fail(section, key, exc):
        raise ConfigError(f"[{section}] {exc}", path, lines.get((section, key)) if key else None) from None

    exp = values["experiment"]
    evo_kwargs = {_EVOLUTION_FIELDS.get(k, k): v for k, v in values["evolution"].items()}
    try:
        evolution = EvolutionConfig(**evo_kwargs)
    except ValueError as exc:
        fail("evolution", next(iter(values["evolution"]), None), exc)
    try:
        training = TrainHyperparams(**values["training"])
    except ValueError as exc:
        fail("training", next(iter(values["training"]), None), exc)
    try:
        mode = Mode(exp.pop("mode", Mode.ASSISTED.value).lower())
    except ValueError:
        raise ConfigError("experiment.mode must be 'normal' or 'assisted'", path, lines.get(("experiment", "mode"))) from None
    try:
        return ExperimentConfig(mode=mode, evolution=evolution, training=training, **exp)
    except ValueError as exc:
        fail("experiment", None, exc)


def _section_line(text: str, section: str) -> Optional[int]:
    for n, raw in enumerate(text.splitlines(), start=1):
        if raw.strip().lower() == f"[{section}]":
            return n
    return None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_config(text, path)


def render_config(config: ExperimentConfig) -> str:
    """INI text that parses back to ``config``."""
    parts = []
    for section, items in config.as_dict().items():
        parts.append(f"[{section}]")
        parts.extend(f"{k} = {v}" for k, v in items.items())
        parts.append("")
    return "\n".join(parts)
