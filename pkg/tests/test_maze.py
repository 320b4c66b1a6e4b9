import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mutation_models.maze import (
    FitnessReport,
    Level,
    MutationAction,
    TileValue,
    apply_action,
    cascade_fitness,
    count_regions,
    evaluate_fitness,
    longest_shortest_path,
    new_random_level,
)
from oracles import floyd_warshall_longest, flood_fill_regions

EMPTY, SOLID = TileValue.EMPTY, TileValue.SOLID


def level_from_rows(*rows):
    return Level.from_text("\n".join(rows))


def checkerboard(size=14):
    return Level([[0 if (x + y) % 2 == 0 else 1 for x in range(size)] for y in range(size)])


grids = st.integers(1, 6).flatmap(
    lambda h: st.integers(1, 6).flatmap(
        lambda w: st.lists(st.lists(st.integers(0, 1), min_size=w, max_size=w), min_size=h, max_size=h)
    )
)


class TestLevel:
    def test_out_of_bounds_reads_solid(self):
        level = Level.filled(3, 2, EMPTY)
        assert level.tile(0, 0) is EMPTY
        for x, y in [(-1, 0), (3, 0), (0, 2), (0, -1), (99, 99)]:
            assert level.tile(x, y) is SOLID

    def test_text_round_trip(self):
        level = new_random_level(14, 14, 0.5, np.random.default_rng(3))
        text = level.to_text()
        assert text.splitlines()[0].strip(".#") == ""
        assert Level.from_text(text) == level

    def test_text_rejects_ragged_rows(self):
        with pytest.raises(ValueError, match="line 2"):
            Level.from_text("..#\n.#\n")

    def test_immutable(self):
        level = Level.filled(2, 2, EMPTY)
        with pytest.raises(ValueError):
            level.tiles[0, 0] = 1


class TestRandomLevel:
    def test_probability_zero_is_all_empty(self):
        level = new_random_level(14, 14, 0.0, np.random.default_rng(0))
        assert level.empty_count() == 196

    def test_probability_one_is_all_solid(self):
        level = new_random_level(14, 14, 1.0, np.random.default_rng(0))
        assert level.empty_count() == 0

    def test_deterministic_under_seed(self):
        a = new_random_level(14, 14, 0.5, np.random.default_rng(42))
        b = new_random_level(14, 14, 0.5, np.random.default_rng(42))
        assert a == b

    @pytest.mark.parametrize("w,h", [(0, 14), (14, 0), (-1, 3)])
    def test_bad_dimensions(self, w, h):
        with pytest.raises(ValueError):
            new_random_level(w, h, 0.5, np.random.default_rng(0))


class TestRegions:
    def test_all_empty(self):
        assert count_regions(Level.filled(14, 14, EMPTY)) == 1

    def test_all_solid(self):
        assert count_regions(Level.filled(14, 14, SOLID)) == 0

    def test_checkerboard_isolates_every_empty_tile(self):
        board = checkerboard()
        assert flood_fill_regions(board.tiles.tolist()) == 98
        assert count_regions(board) == 98

    def test_diagonal_neighbours_do_not_connect(self):
        assert count_regions(level_from_rows(".#", "#.")) == 2

    @given(grids)
    @settings(max_examples=200, deadline=None)
    def test_bounded_by_empty_count(self, grid):
        level = Level(grid)
        assert 0 <= count_regions(level) <= level.empty_count()
        assert (count_regions(level) == 0) == (level.empty_count() == 0)


class TestLongestPath:
    def test_single_empty_tile(self):
        tiles = np.ones((14, 14), np.uint8)
        tiles[5, 5] = 0
        assert longest_shortest_path(Level(tiles)) == 0

    def test_corridor_row(self):
        tiles = np.ones((14, 14), np.uint8)
        tiles[4, :] = 0
        assert floyd_warshall_longest(tiles.tolist()) == 13
        assert longest_shortest_path(Level(tiles)) == 13

    def test_three_by_three_block(self):
        tiles = np.ones((14, 14), np.uint8)
        tiles[2:5, 6:9] = 0
        assert floyd_warshall_longest(tiles.tolist()) == 4
        assert longest_shortest_path(Level(tiles)) == 4

    def test_ignores_pairs_in_different_regions(self):
        level = level_from_rows("..#...")
        assert longest_shortest_path(level) == 2

    def test_serpentine(self):
        level = level_from_rows(
            ".....",
            "####.",
            ".....",
            ".####",
            ".....",
        )
        assert longest_shortest_path(level) == 16 == floyd_warshall_longest(level.tiles.tolist())

    @given(grids)
    @settings(max_examples=200, deadline=None)
    def test_matches_floyd_warshall(self, grid):
        assert longest_shortest_path(Level(grid)) == floyd_warshall_longest(grid)


class TestFitness:
    def test_cascade_branches(self):
        assert cascade_fitness(5, 0) == pytest.approx(0.375, abs=1e-12)
        assert cascade_fitness(1, 49) == pytest.approx(0.75, abs=1e-12)
        assert cascade_fitness(0, 0) == 0.0
        assert cascade_fitness(20, 0) == 0.0
        assert cascade_fitness(19, 0) == pytest.approx(0.025)

    def test_clamped_above_normalizer(self):
        assert cascade_fitness(1, 150) == 1.0

    def test_evaluate_all_solid(self):
        assert evaluate_fitness(Level.filled(14, 14, SOLID)) == FitnessReport(0, 0, 0.0)

    def test_evaluate_corridor(self):
        tiles = np.ones((14, 14), np.uint8)
        tiles[4, :] = 0
        report = evaluate_fitness(Level(tiles))
        assert report.regions == 1 and report.longest_path == 13
        assert report.fitness == pytest.approx(0.5 + 0.5 * 13 / 98, abs=1e-12)

    def test_checkerboard_is_beyond_region_cap(self):
        assert evaluate_fitness(checkerboard()).fitness == 0.0

    @given(st.integers(0, 196), st.integers(0, 98))
    def test_cascade_property(self, n, p):
        f = cascade_fitness(n, p)
        assert 0.0 <= f <= 1.0
        if n == 1:
            assert f >= 0.5
        elif 1 < n < 20:
            assert f < 0.5
        else:
            assert f == 0.0


class TestApplyAction:
    def test_no_change_is_identity(self):
        level = new_random_level(14, 14, 0.5, np.random.default_rng(1))
        assert apply_action(level, 3, 3, MutationAction.NO_CHANGE) == level

    def test_change_to_empty(self):
        out = apply_action(Level.filled(14, 14, SOLID), 0, 0, MutationAction.CHANGE_TO_EMPTY)
        assert out.empty_count() == 1 and out.tile(0, 0) is EMPTY

    def test_change_to_solid(self):
        out = apply_action(Level.filled(14, 14, EMPTY), 13, 13, MutationAction.CHANGE_TO_SOLID)
        assert out.empty_count() == 195 and out.tile(13, 13) is SOLID

    def test_input_untouched(self):
        level = Level.filled(4, 4, EMPTY)
        apply_action(level, 1, 2, MutationAction.CHANGE_TO_SOLID)
        assert level.empty_count() == 16

    @pytest.mark.parametrize("x,y", [(-1, 0), (14, 0), (0, 14)])
    def test_out_of_bounds(self, x, y):
        with pytest.raises(ValueError):
            apply_action(Level.filled(14, 14, EMPTY), x, y, MutationAction.CHANGE_TO_SOLID)

    @given(grids, st.integers(0, 5), st.integers(0, 5), st.sampled_from(list(MutationAction)))
    def test_idempotent(self, grid, x, y, action):
        level = Level(grid)
        x, y = x % level.width, y % level.height
        once = apply_action(level, x, y, action)
        assert apply_action(once, x, y, action) == once


def test_exhaustive_three_by_three():
    for bits in itertools.product((0, 1), repeat=9):
        grid = [list(bits[0:3]), list(bits[3:6]), list(bits[6:9])]
        level = Level(grid)
        assert count_regions(level) == flood_fill_regions(grid)
        assert longest_shortest_path(level) == floyd_warshall_longest(grid)
