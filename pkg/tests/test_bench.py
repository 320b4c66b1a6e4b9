import csv

import numpy as np

from mutation_models.bench import benchmark_walltime
from mutation_models.evolution import EvolutionConfig, evolve_until_connected
from mutation_models.maze import MutationAction
from mutation_models.policy import PolicyWeights, init_network


def empty_policy():
    w = init_network(0)
    params = {k: np.zeros_like(v) for k, v in w.params.items()}
    params["dense2.bias"][int(MutationAction.CHANGE_TO_EMPTY)] = 50.0
    return PolicyWeights(params)


def test_evolve_until_connected():
    best, used = evolve_until_connected(EvolutionConfig(), np.random.default_rng(0), max_generations=2000)
    assert best.fitness.regions == 1 and 0 <= used <= 2000


def test_evolve_until_connected_respects_cap():
    best, used = evolve_until_connected(EvolutionConfig(width=30, height=30), np.random.default_rng(0), max_generations=1)
    assert used <= 1


def test_benchmark_report(tmp_path):
    report = benchmark_walltime(empty_policy(), 3, EvolutionConfig(), seed=1, evolution_runs=2, csv_path=tmp_path / "b.csv")
    assert report.network_success_rate == 100.0
    assert report.network_mean_s > 0 and report.evolution_mean_s > 0
    assert report.speedup > 0
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert [r["method"] for r in rows] == ["network"] * 3 + ["evolution"] * 2
    assert set(report.as_dict()) >= {"speedup", "network_mean_s", "evolution_mean_s"}
