import numpy as np
import pytest

from mutation_models.inference import CachedPolicy, batch_generate, episode_rng, generate_level
from mutation_models.maze import MutationAction, apply_action, count_regions, longest_shortest_path, new_random_level
from mutation_models.policy import PolicyWeights, encode_observation, forward, init_network, sample_action


def constant_policy(action):
    w = init_network(0)
    params = {k: np.zeros_like(v) for k, v in w.params.items()}
    params["dense2.bias"][int(action)] = 50.0
    return PolicyWeights(params)


def mixed_policy():
    # untrained network with small logits gives all three actions real mass
    return init_network(11)


def reference_generate(weights, rng, width=14, height=14, noise=0.5, max_passes=196):
    """Slow reference built from the public observation, forward and sampling helpers."""
    level = new_random_level(width, height, noise, rng)
    if count_regions(level) == 1:
        return level, True, 0
    for p in range(1, max_passes + 1):
        for y in range(height):
            for x in range(width):
                probs = forward(weights, encode_observation(level, x, y))
                action = MutationAction(sample_action(probs, rng))
                new = apply_action(level, x, y, action)
                if new is not level:
                    level = new
                    if count_regions(level) == 1:
                        return level, True, p
    return level, False, max_passes


class TestGenerateLevel:
    def test_empty_policy_connects_in_first_pass(self):
        out = generate_level(constant_policy(MutationAction.CHANGE_TO_EMPTY), np.random.default_rng(3))
        assert out.success and out.iterations in (0, 1)
        assert count_regions(out.final_level) == 1

    def test_no_change_policy_fails_after_cap(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            out = generate_level(constant_policy(MutationAction.NO_CHANGE), rng, max_passes=196)
            if out.success:
                assert out.iterations == 0
                continue
            assert out.iterations == 196 and out.path_length is None and out.empty_tiles is None
            break
        else:
            pytest.fail("every noise start was already connected")

    def test_connected_start_counts_zero(self):
        # noise 0 is a fully empty level, connected before any pass
        out = generate_level(constant_policy(MutationAction.CHANGE_TO_SOLID), np.random.default_rng(0), noise=0.0)
        assert out.success and out.iterations == 0
        assert out.empty_tiles == 196 and out.path_length == 26

    def test_outcome_fields(self):
        out = generate_level(mixed_policy(), np.random.default_rng(5))
        if out.success:
            assert out.path_length == longest_shortest_path(out.final_level)
            assert out.empty_tiles == out.final_level.empty_count()
            assert count_regions(out.final_level) == 1
        assert out.wall_time_ms >= 0

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_reference(self, seed):
        w = mixed_policy()
        out = generate_level(w, np.random.default_rng(seed), max_passes=3)
        level, success, iterations = reference_generate(w, np.random.default_rng(seed), max_passes=3)
        assert out.final_level == level
        assert (out.success, out.iterations) == (success, iterations)

    def test_small_level(self):
        out = generate_level(constant_policy(MutationAction.CHANGE_TO_EMPTY), np.random.default_rng(1), width=5, height=3)
        assert out.success and out.final_level.tiles.shape == (3, 5)

    def test_cache_does_not_change_result(self):
        w = mixed_policy()
        shared = CachedPolicy(w)
        generate_level(w, np.random.default_rng(99), policy=shared, max_passes=2)
        a = generate_level(w, np.random.default_rng(7), policy=shared, max_passes=2)
        b = generate_level(w, np.random.default_rng(7), max_passes=2)
        assert a.final_level == b.final_level and a.iterations == b.iterations


class TestBatch:
    def test_deterministic(self):
        w = mixed_policy()
        a = batch_generate(w, 4, seed=3, max_passes=2)
        b = batch_generate(w, 4, seed=3, max_passes=2)
        assert [o.final_level for o in a] == [o.final_level for o in b]

    def test_worker_count_independent(self):
        w = mixed_policy()
        a = batch_generate(w, 4, seed=8, max_passes=2)
        b = batch_generate(w, 4, seed=8, workers=2, max_passes=2)
        assert [(o.final_level, o.iterations) for o in a] == [(o.final_level, o.iterations) for o in b]

    def test_episodes_independent_of_batch_size(self):
        w = mixed_policy()
        a = batch_generate(w, 2, seed=4, max_passes=2)
        b = batch_generate(w, 3, seed=4, max_passes=2)
        assert [o.final_level for o in a] == [o.final_level for o in b[:2]]

    def test_episode_streams_differ(self):
        assert episode_rng(0, 0).random() != episode_rng(0, 1).random()

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            batch_generate(mixed_policy(), 0, seed=0)


def test_inference_module_has_no_fitness_dependency():
    import mutation_models.inference as inference

    assert not hasattr(inference, "evaluate_fitness") and not hasattr(inference, "cascade_fitness")
