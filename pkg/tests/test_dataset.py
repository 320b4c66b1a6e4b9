import numpy as np
import pytest

from mutation_models.dataset import DatasetParseError, TrainingDataset, extract_dataset, load_dataset, save_dataset
from conftest import short_config
from mutation_models.evolution import (
    Chromosome,
    CorruptHistoryError,
    EvolutionConfig,
    Mode,
    MutationRecord,
    rank,
    replay_history,
    run_evolution,
)
from mutation_models.maze import Level, MutationAction, TileValue, apply_action, evaluate_fitness
from mutation_models.policy import encode_observation


@pytest.fixture(scope="module")
def evolved():
    return run_evolution(short_config(generations=80, seed=4), Mode.NORMAL, train_at_end=False)


def handmade():
    start = Level.filled(14, 14, TileValue.SOLID)
    history = (
        MutationRecord(0, 0, MutationAction.CHANGE_TO_EMPTY),
        MutationRecord(1, 0, MutationAction.NO_CHANGE),
        MutationRecord(1, 0, MutationAction.CHANGE_TO_EMPTY),
    )
    level = start
    for r in history:
        level = apply_action(level, r.x, r.y, r.action)
    return Chromosome(start, history, level, evaluate_fitness(level), 0)


class TestExtract:
    def test_empty_history_contributes_nothing(self):
        level = Level.filled(14, 14, TileValue.EMPTY)
        c = Chromosome(level, (), level, evaluate_fitness(level), 0)
        assert len(extract_dataset([c])) == 0

    def test_observation_precedes_action(self):
        data = extract_dataset([handmade()])
        assert len(data) == 3
        assert data.actions.tolist() == [1, 0, 1]
        assert data.observations[0][3, 3] == 1
        # second step looks at (1, 0) after (0, 0) was emptied: (0, 0) sits left of centre
        assert data.observations[1][3, 2] == 0 and data.observations[1][3, 3] == 1

    def test_size_is_sum_of_history_lengths(self, evolved):
        top = rank(evolved.population)[:10]
        data = extract_dataset(top)
        assert len(data) == sum(len(c.history) for c in top) == evolved.stats[-1].dataset_size

    def test_audit_against_replay(self, evolved):
        top = rank(evolved.population)[:10]
        data = extract_dataset(top)
        rng = np.random.default_rng(0)
        offsets = np.cumsum([0] + [len(c.history) for c in top])
        for k in rng.choice(len(data), size=min(100, len(data)), replace=False):
            owner = int(np.searchsorted(offsets, k, side="right") - 1)
            step = k - offsets[owner]
            chrom = top[owner]
            prefix = Chromosome(chrom.initial_level, chrom.history[:step], chrom.initial_level, chrom.fitness, 0)
            before = replay_history(prefix)
            rec = chrom.history[step]
            assert np.array_equal(data.observations[k], encode_observation(before, rec.x, rec.y).astype(np.uint8))
            assert data.actions[k] == int(rec.action)

    def test_corrupt_history_names_chromosome(self):
        c = handmade()
        bad = Chromosome(c.initial_level, c.history + (MutationRecord(-1, 3, MutationAction.NO_CHANGE),), c.current_level, c.fitness, 42)
        with pytest.raises(CorruptHistoryError, match="chromosome 42"):
            extract_dataset([bad])

    def test_class_counts(self, evolved):
        data = extract_dataset(rank(evolved.population)[:10])
        counts = data.class_counts()
        assert sum(counts.values()) == len(data)
        assert set(counts) == {"NO_CHANGE", "CHANGE_TO_EMPTY", "CHANGE_TO_SOLID"}


class TestPersistence:
    def test_round_trip(self, tmp_path, evolved):
        data = extract_dataset(rank(evolved.population)[:10], provenance="run-x gen=80")
        save_dataset(data, tmp_path / "gen80.ds")
        back = load_dataset(tmp_path / "gen80.ds")
        assert back == data
        assert back.provenance == "run-x gen=80"

    def test_round_trip_preserves_replay(self, tmp_path):
        c = handmade()
        data = extract_dataset([c])
        save_dataset(data, tmp_path / "d.ds")
        back = load_dataset(tmp_path / "d.ds")
        level = c.initial_level
        for obs, action, rec in zip(back.observations, back.actions, c.history):
            assert np.array_equal(obs, encode_observation(level, rec.x, rec.y))
            level = apply_action(level, rec.x, rec.y, MutationAction(int(action)))
        assert level == c.current_level

    def test_empty(self, tmp_path):
        save_dataset(TrainingDataset.empty(provenance="nothing"), tmp_path / "e.ds")
        assert len((tmp_path / "e.ds").read_text().splitlines()) == 1
        assert len(load_dataset(tmp_path / "e.ds")) == 0

    def test_handwritten(self, tmp_path):
        ones = "1" * 64
        mixed = "0" * 27 + "1" + "0" * 36
        (tmp_path / "h.ds").write_text(f"mmds 1 crop=8 provenance=hand\n{ones} 2\n{mixed} 0\n")
        data = load_dataset(tmp_path / "h.ds")
        assert len(data) == 2
        assert data.actions.tolist() == [2, 0]
        assert data.observations[0].all()
        assert data.observations[1][3, 3] == 1 and data.observations[1].sum() == 1

    @pytest.mark.parametrize(
        "body,lineno",
        [("0101 1\n", 2), ("1" * 64 + " 7\n", 2), ("1" * 64 + " 1\n" + "2" * 64 + " 1\n", 3), ("1" * 64 + "1\n", 2)],
    )
    def test_malformed_line(self, tmp_path, body, lineno):
        (tmp_path / "bad.ds").write_text("mmds 1 crop=8 provenance=\n" + body)
        with pytest.raises(DatasetParseError) as info:
            load_dataset(tmp_path / "bad.ds")
        assert info.value.lineno == lineno

    def test_bad_header(self, tmp_path):
        (tmp_path / "bad.ds").write_text("hello\n")
        with pytest.raises(DatasetParseError):
            load_dataset(tmp_path / "bad.ds")
