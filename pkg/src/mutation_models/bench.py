"""Wall-clock comparison: trained policy inference against evolution-until-connected."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .evolution import EvolutionConfig, evolve_until_connected
from .inference import DEFAULT_MAX_PASSES, CachedPolicy, episode_rng, generate_level
from .metrics import compute_batch_metrics, mean_ci95
from .policy import PolicyWeights


@dataclass(frozen=True)
class BenchmarkReport:
    n: int
    network_success_rate: float
    network_diversity: float
    network_mean_s: float
    network_ci95_s: float
    network_s_per_success: float
    evolution_success_rate: float
    evolution_diversity: float
    evolution_mean_s: float
    evolution_ci95_s: float
    evolution_mean_generations: float
    speedup: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class _EvolvedOutcome:
    success: bool
    iterations: int
    path_length: int
    empty_tiles: int


def time_network(weights: PolicyWeights, n: int, config: EvolutionConfig, seed: int = 0, max_passes: int = DEFAULT_MAX_PASSES):
    """Run ``n`` inference episodes, each with an empty observation cache.

    Returns ``(outcomes, seconds)`` with one wall time per episode.
    """
    times, outcomes = [], []
    for i in range(n):
        started = time.perf_counter()
        outcome = generate_level(
            weights,
            episode_rng(seed, i),
            width=config.width,
            height=config.height,
            noise=config.noise,
            max_passes=max_passes,
            policy=CachedPolicy(weights),
        )
        times.append(time.perf_counter() - started)
        outcomes.append(outcome)
    return outcomes, times


def time_evolution(runs: int, config: EvolutionConfig, seed: int = 0, max_generations: int = 2000):
    """Run ``runs`` random-mutation evolutions until the best level is connected.

    Returns ``(outcomes, seconds)``; an outcome's ``iterations`` is the
    number of generations used.
    """
    times, outcomes = [], []
    for i in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, i)))
        started = time.perf_counter()
        best, used = evolve_until_connected(config, rng, max_generations)
        times.append(time.perf_counter() - started)
        outcomes.append(_EvolvedOutcome(best.fitness.regions == 1, used, best.fitness.longest_path, best.current_level.empty_count()))
    return outcomes, times


def summarize(net_outcomes, net_times, evo_outcomes, evo_times) -> BenchmarkReport:
    net = compute_batch_metrics(net_outcomes)
    evo = compute_batch_metrics(evo_outcomes)
    net_mean, net_ci = mean_ci95(net_times)
    evo_mean, evo_ci = mean_ci95(evo_times)
    per_success = sum(net_times) / net.successes if net.successes else float("inf")
    return BenchmarkReport(
        n=len(net_outcomes),
        network_success_rate=net.success_rate,
        network_diversity=net.diversity,
        network_mean_s=net_mean,
        network_ci95_s=net_ci,
        network_s_per_success=per_success,
        evolution_success_rate=evo.success_rate,
        evolution_diversity=evo.diversity,
        evolution_mean_s=evo_mean,
        evolution_ci95_s=evo_ci,
        evolution_mean_generations=float(np.mean([o.iterations for o in evo_outcomes])),
        speedup=evo_mean / per_success if per_success > 0 else 0.0,
    )


def write_benchmark_csv(path, net_outcomes, net_times, evo_outcomes, evo_times) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "index", "wall_time_s", "success", "iterations_or_generations"])
        for i, (o, t) in enumerate(zip(net_outcomes, net_times)):
            writer.writerow(["network", i, f"{t:.6f}", int(o.success), o.iterations])
        for i, (o, t) in enumerate(zip(evo_outcomes, evo_times)):
            writer.writerow(["evolution", i, f"{t:.6f}", int(o.success), o.iterations])


def benchmark_walltime(
    weights: PolicyWeights,
    n: int,
    config: EvolutionConfig,
    seed: int = 0,
    max_generations: int = 2000,
    evolution_runs: Optional[int] = None,
    csv_path=None,
) -> BenchmarkReport:
    """Time ``n`` inference episodes and ``evolution_runs`` (default ``n``) evolutions, single-threaded.

    Both sides use the configured level size and noise start; no work is
    shared between inference episodes. ``speedup`` compares mean time per
    evolution run with total network time divided by successful levels.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    evolution_runs = n if evolution_runs is None else evolution_runs
    if evolution_runs <= 0:
        raise ValueError("evolution_runs must be positive")
    net_outcomes, net_times = time_network(weights, n, config, seed)
    evo_outcomes, evo_times = time_evolution(evolution_runs, config, seed, max_generations)
    if csv_path is not None:
        write_benchmark_csv(csv_path, net_outcomes, net_times, evo_outcomes, evo_times)
    return summarize(net_outcomes, net_times, evo_outcomes, evo_times)
