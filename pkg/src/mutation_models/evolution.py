"""mu + lambda evolution strategy whose chromosomes remember how they were made."""
from __future__ import annotations

import enum
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from .maze import (
    DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
    FitnessReport,
    Level,
    MutationAction,
    apply_action,
    evaluate_fitness,
    new_random_level,
)
from .metrics import ratcliff_obershelp
from .policy import (
    DEFAULT_CROP,
    PolicyWeights,
    TrainHyperparams,
    crop_padded,
    forward_batch,
    pad_level,
    sample_actions,
    train,
)

log = logging.getLogger(__name__)


class CorruptHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class MutationRecord:
    x: int
    y: int
    action: MutationAction

    def token(self) -> tuple[int, int, int]:
        return (self.x, self.y, int(self.action))


@dataclass(frozen=True, eq=False)
class Chromosome:
    initial_level: Level
    history: tuple[MutationRecord, ...]
    current_level: Level
    fitness: FitnessReport
    creation_index: int


@dataclass(frozen=True)
class EvolutionConfig:
    mu: int = 50
    lam: int = 50
    generations: int = 2000
    top_x: int = 10
    train_interval: int = 100
    random_action_chance: float = 0.25
    seed: int = 0
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    noise: float = 0.5
    # equal fitness: True ranks the newer chromosome first, allowing neutral drift
    prefer_offspring: bool = True

    def __post_init__(self) -> None:
        problems = []
        if self.mu <= 0 or self.lam <= 0:
            problems.append("mu and lambda must be positive")
        if not 0 < self.top_x <= self.mu + self.lam:
            problems.append("top_x must be in [1, mu + lambda]")
        if self.generations < 0:
            problems.append("generations must be non-negative")
        if self.train_interval <= 0 or self.train_interval > max(self.generations, 1):
            problems.append("train_interval must be in [1, generations]")
        if not 0.0 <= self.random_action_chance <= 1.0:
            problems.append("random_action_chance must be in [0, 1]")
        if not 0.0 <= self.noise <= 1.0:
            problems.append("noise must be in [0, 1]")
        if self.width <= 0 or self.height <= 0:
            problems.append("level dimensions must be positive")
        if problems:
            raise ValueError("invalid evolution config: " + "; ".join(problems))


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_fitness: float
    mean_top10_fitness: float
    dataset_size: int
    history_similarity: float


class Mode(str, enum.Enum):
    NORMAL = "normal"
    ASSISTED = "assisted"


Population = list


class Mutator(Protocol):
    def choose_actions(self, levels: Sequence[Level], xs: np.ndarray, ys: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ...


class RandomMutator:
    """Uniform over all three actions, NoChange included."""

    def choose_actions(self, levels, xs, ys, rng):
        return rng.integers(0, len(MutationAction), size=len(xs))


class PolicyMutator:
    """Samples from the policy, replaced by a uniform action with ``random_action_chance``."""

    def __init__(self, weights: PolicyWeights, random_action_chance: float = 0.25) -> None:
        self.weights = weights
        self.random_action_chance = random_action_chance

    def choose_actions(self, levels, xs, ys, rng):
        n = len(xs)
        crop = self.weights.crop_size
        obs = np.stack(
            [crop_padded(pad_level(level.tiles, crop), int(x), int(y), crop) for level, x, y in zip(levels, xs, ys)]
        ).astype(np.float32)
        sampled = sample_actions(forward_batch(self.weights, obs), rng)
        use_random = rng.random(n) < self.random_action_chance
        uniform = rng.integers(0, len(MutationAction), size=n)
        return np.where(use_random, uniform, sampled)


class _Counter:
    def __init__(self, start: int = 0) -> None:
        self._it = itertools.count(start)

    def __call__(self) -> int:
        return next(self._it)


def _make_child(parent: Chromosome, x: int, y: int, action: int, index: int) -> Chromosome:
    record = MutationRecord(x, y, MutationAction(action))
    level = apply_action(parent.current_level, x, y, record.action)
    # unchanged tile means unchanged fitness; skip the expensive re-evaluation
    fitness = parent.fitness if level is parent.current_level else evaluate_fitness(level)
    return Chromosome(parent.initial_level, parent.history + (record,), level, fitness, index)


def mutate_many(
    parents: Sequence[Chromosome],
    mutator: Mutator,
    rng: np.random.Generator,
    next_index: Callable[[], int],
) -> list[Chromosome]:
    """One child per parent. Draw order: all x, all y, then the mutator's draws."""
    if not parents:
        return []
    width, height = parents[0].current_level.width, parents[0].current_level.height
    xs = rng.integers(0, width, size=len(parents))
    ys = rng.integers(0, height, size=len(parents))
    actions = mutator.choose_actions([p.current_level for p in parents], xs, ys, rng)
    return [_make_child(p, int(x), int(y), int(a), next_index()) for p, x, y, a in zip(parents, xs, ys, actions)]


def mutate(parent: Chromosome, mutator: Mutator, rng: np.random.Generator, index: int = -1) -> Chromosome:
    """Child of ``parent`` with one extra history step at a uniform random location."""
    return mutate_many([parent], mutator, rng, lambda: index)[0]


def init_population(config: EvolutionConfig, rng: np.random.Generator, counter: Optional[_Counter] = None) -> Population:
    counter = counter or _Counter()
    population = []
    for _ in range(config.mu + config.lam):
        level = new_random_level(config.width, config.height, config.noise, rng)
        population.append(Chromosome(level, (), level, evaluate_fitness(level), counter()))
    return population


def rank(population: Iterable[Chromosome], prefer_offspring: bool = True) -> list[Chromosome]:
    """Best first. Equal fitness is ordered by creation index, newest or oldest first."""
    sign = -1 if prefer_offspring else 1
    return sorted(population, key=lambda c: (-c.fitness.fitness, sign * c.creation_index))


def select_parents(population: Sequence[Chromosome], mu: int, prefer_offspring: bool = True) -> list[Chromosome]:
    """The ``mu`` fittest chromosomes, best first.

    With ``prefer_offspring=False`` ties keep the older chromosome, which
    freezes the population as soon as ``mu`` chromosomes share the best
    fitness; the default lets equal-fitness offspring replace their parents.
    """
    if mu > len(population):
        raise ValueError(f"cannot select {mu} parents from a population of {len(population)}")
    if mu <= 0:
        raise ValueError("mu must be positive")
    return rank(population, prefer_offspring)[:mu]


def step_generation(
    population: Population,
    config: EvolutionConfig,
    mutator: Mutator,
    rng: np.random.Generator,
    counter: Optional[_Counter] = None,
) -> Population:
    if len(population) != config.mu + config.lam:
        raise ValueError(f"population size {len(population)} != mu + lambda = {config.mu + config.lam}")
    if counter is None:
        counter = _Counter(max(c.creation_index for c in population) + 1)
    parents = select_parents(population, config.mu, config.prefer_offspring)
    # parents cycle when lambda != mu; with mu == lambda each parent has exactly one child
    chosen = [parents[i % config.mu] for i in range(config.lam)]
    return parents + mutate_many(chosen, mutator, rng, counter)


def replay_history(chromosome: Chromosome) -> Level:
    level = chromosome.initial_level
    for step, record in enumerate(chromosome.history):
        if not level.in_bounds(record.x, record.y):
            raise CorruptHistoryError(
                f"chromosome {chromosome.creation_index}: step {step} location ({record.x}, {record.y}) out of bounds"
            )
        level = apply_action(level, record.x, record.y, record.action)
    return level


@dataclass
class EvolutionResult:
    population: Population
    stats: list[GenerationStats]
    weights: Optional[PolicyWeights] = None
    training_events: list[int] = field(default_factory=list)
    loss_curves: dict[int, list[float]] = field(default_factory=dict)


class SimilarityCache:
    """Pairwise history similarity keyed by creation index; survivors are compared once."""

    def __init__(self) -> None:
        self._cache: dict[tuple[int, int], float] = {}

    def mean_similarity(self, chromosomes: Sequence[Chromosome]) -> float:
        if len(chromosomes) < 2:
            raise ValueError("history similarity needs at least two chromosomes")
        live = {}
        total = 0.0
        pairs = 0
        for a, b in itertools.combinations(chromosomes, 2):
            key = (min(a.creation_index, b.creation_index), max(a.creation_index, b.creation_index))
            value = self._cache.get(key)
            if value is None:
                value = ratcliff_obershelp([r.token() for r in a.history], [r.token() for r in b.history])
            live[key] = value
            total += value
            pairs += 1
        self._cache = live
        return total / pairs


def generation_stats(
    generation: int,
    population: Sequence[Chromosome],
    top_x: int,
    cache: SimilarityCache,
    prefer_offspring: bool = True,
) -> GenerationStats:
    top = rank(population, prefer_offspring)[:top_x]
    return GenerationStats(
        generation=generation,
        best_fitness=top[0].fitness.fitness,
        mean_top10_fitness=float(np.mean([c.fitness.fitness for c in top])),
        dataset_size=sum(len(c.history) for c in top),
        history_similarity=cache.mean_similarity(top) if len(top) > 1 else 1.0,
    )


def training_seed(config_seed: int, generation: int) -> int:
    return int(np.random.SeedSequence([config_seed, generation, 7]).generate_state(1)[0])


def run_evolution(
    config: EvolutionConfig,
    mode: Mode = Mode.NORMAL,
    train_hyper: Optional[TrainHyperparams] = None,
    hooks: Sequence[Callable[[int, Population, GenerationStats], None]] = (),
    on_training: Optional[Callable[[int, object, PolicyWeights, list[float]], None]] = None,
    train_at_end: bool = True,
    crop_size: int = DEFAULT_CROP,
) -> EvolutionResult:
    """Evolve for ``config.generations`` generations.

    Normal mode mutates randomly throughout and, if ``train_at_end``, fits one
    model on the final top-X histories. Assisted mode retrains a fresh model
    every ``train_interval`` generations and mutates with it until the next
    training event. ``on_training(generation, dataset, weights, losses)`` is
    called after every fit.
    """
    from .dataset import extract_dataset

    mode = Mode(mode)
    train_hyper = train_hyper or TrainHyperparams()
    rng = np.random.default_rng(config.seed)
    counter = _Counter()
    population = init_population(config, rng, counter)
    cache = SimilarityCache()
    mutator: Mutator = RandomMutator()
    result = EvolutionResult(population, [])

    def record(generation: int) -> None:
        stats = generation_stats(generation, population, config.top_x, cache, config.prefer_offspring)
        result.stats.append(stats)
        for hook in hooks:
            hook(generation, population, stats)

    def fit(generation: int) -> PolicyWeights:
        top = rank(population, config.prefer_offspring)[: config.top_x]
        dataset = extract_dataset(top, crop_size=crop_size, provenance=f"seed={config.seed} gen={generation}")
        if len(dataset) == 0:
            raise RuntimeError(f"training event at generation {generation} has an empty dataset")
        hyper = TrainHyperparams(
            learning_rate=train_hyper.learning_rate,
            batch_size=train_hyper.batch_size,
            epochs=train_hyper.epochs,
            seed=training_seed(config.seed, generation),
        )
        started = time.perf_counter()
        weights, losses = train(dataset, hyper, crop_size)
        log.info(
            "generation %d: trained on %d examples in %.1fs (loss %s)",
            generation,
            len(dataset),
            time.perf_counter() - started,
            ", ".join(f"{v:.4f}" for v in losses),
        )
        result.training_events.append(generation)
        result.loss_curves[generation] = losses
        if on_training is not None:
            on_training(generation, dataset, weights, losses)
        return weights

    record(0)
    for generation in range(1, config.generations + 1):
        population = step_generation(population, config, mutator, rng, counter)
        record(generation)
        if mode is Mode.ASSISTED and generation % config.train_interval == 0:
            result.weights = fit(generation)
            mutator = PolicyMutator(result.weights, config.random_action_chance)
        if generation % 100 == 0:
            last = result.stats[-1]
            log.info(
                "generation %d: best %.4f top-mean %.4f dataset %d similarity %.3f",
                generation,
                last.best_fitness,
                last.mean_top10_fitness,
                last.dataset_size,
                last.history_similarity,
            )

    if mode is Mode.NORMAL and train_at_end:
        result.weights = fit(config.generations)
    result.population = population
    return result


def evolve_until_connected(config: EvolutionConfig, rng: np.random.Generator, max_generations: int = 2000):
    """Random-mutation evolution stopped at the first fully connected level.

    Returns ``(best chromosome, generations used)``.
    """
    counter = _Counter()
    population = init_population(config, rng, counter)
    mutator = RandomMutator()
    for generation in range(max_generations + 1):
        best = rank(population, config.prefer_offspring)[0]
        if best.fitness.regions == 1:
            return best, generation
        if generation == max_generations:
            break
        population = step_generation(population, config, mutator, rng, counter)
    return rank(population, config.prefer_offspring)[0], max_generations
