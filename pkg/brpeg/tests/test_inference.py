import pytest
import numpy as np
import pandas as pd

from ..grid import JointState
from ..levelk import build_hierarchy
from ..simulate import rollout, game_seed
from ..inference import (
    Belief, LOG_FLOOR, DynamicLevelController, transition_probability,
    window_log_likelihood, infer_fixed, belief_heatmap, heatmap_to_csv,
    inference_accuracy
)

start = JointState((1, 1), (3, 2))


@pytest.fixture(scope='module')
def game(kernel, hierarchy):
    """A level-2 pursuer against a level-3 evader."""
    for g in range(100):
        trajectory = rollout(kernel, hierarchy.policy('pursuer', 2),
                             hierarchy.policy('evader', 3), start,
                             seed=game_seed(0, g))
        if trajectory.steps >= 4:
            return trajectory
    raise RuntimeError("No game of four or more steps.")


def test_empty_window(kernel, hierarchy):
    result = window_log_likelihood(kernel, hierarchy, 'evader', 3, 2,
                                   [kernel.index(start)])
    assert result.log_likelihood == 0
    assert result.floored == 0


def test_single_transition(kernel, hierarchy, game):
    result = window_log_likelihood(kernel, hierarchy, 'evader', 3, 2,
                                   game.states[:2])
    p = transition_probability(kernel, hierarchy.policy('pursuer', 2),
                               hierarchy.policy('evader', 3), game.states[0],
                               game.states[1])
    assert p > 0
    assert result.log_likelihood == pytest.approx(np.log(p))


def test_likelihood_decomposes(kernel, hierarchy, game):
    states = game.states
    for level in range(4):
        total = window_log_likelihood(kernel, hierarchy, 'evader', 3, level,
                                      states).log_likelihood
        terms = 0.0
        for n in range(len(states) - 1):
            shorter = window_log_likelihood(kernel, hierarchy, 'evader', 3, level,
                                            states, stop=n)
            longer = window_log_likelihood(kernel, hierarchy, 'evader', 3, level,
                                           states, stop=n + 1)
            term = window_log_likelihood(kernel, hierarchy, 'evader', 3, level,
                                         states, start=n, stop=n + 1)
            assert longer.log_likelihood - shorter.log_likelihood == \
                pytest.approx(term.log_likelihood, abs=1e-12)
            terms += term.log_likelihood
        assert total == pytest.approx(terms, abs=1e-10)
        assert total <= 0


def test_per_stage_levels(kernel, hierarchy, game):
    states = game.states
    n = len(states) - 1
    levels = np.where(np.arange(n) % 2 == 0, 1, 3)
    mixed = window_log_likelihood(kernel, hierarchy, 'evader', levels, 2, states)
    expected = sum(
        window_log_likelihood(kernel, hierarchy, 'evader', int(levels[i]), 2, states,
                              start=i, stop=i + 1).log_likelihood
        for i in range(n)
    )
    assert mixed.log_likelihood == pytest.approx(expected, abs=1e-12)


def test_short_level_schedule_is_rejected(kernel, hierarchy, game):
    states = game.states
    n = len(states) - 1
    with pytest.raises(ValueError, match='observer levels'):
        window_log_likelihood(kernel, hierarchy, 'evader', np.full(n - 1, 3), 2,
                              states)
    with pytest.raises(ValueError, match='observer levels'):
        window_log_likelihood(kernel, hierarchy, 'evader', np.full(2, 3), 2,
                              states, start=1, stop=4)
    # entries past the last transition are not used
    longer = window_log_likelihood(kernel, hierarchy, 'evader', np.full(n + 2, 3), 2,
                                   states)
    constant = window_log_likelihood(kernel, hierarchy, 'evader', 3, 2, states)
    assert longer.log_likelihood == pytest.approx(constant.log_likelihood, abs=1e-12)


def test_impossible_transition_is_floored(kernel, hierarchy):
    jump = [kernel.index(start), kernel.index(JointState((3, 1), (3, 2)))]
    result = window_log_likelihood(kernel, hierarchy, 'evader', 3, 1, jump)
    assert result.log_likelihood == LOG_FLOOR
    assert result.floored == 1


def test_transition_out_of_terminal(kernel, hierarchy):
    captured = kernel.index(JointState((2, 2), (2, 2)))
    with pytest.raises(ValueError):
        window_log_likelihood(kernel, hierarchy, 'evader', 3, 1,
                              [captured, kernel.index(start)])
    with pytest.raises(ValueError):
        window_log_likelihood(kernel, hierarchy, 'evader', 3, 1,
                              [kernel.index(start)], stop=2)


def test_belief_ties_and_normalization():
    belief = Belief(4, np.arange(3), np.array([-2.0, -1.0, -1.0]))
    assert belief.mle_level == 1
    assert belief.normalized.sum() == pytest.approx(1)
    assert belief.normalized[1] == belief.normalized[2]
    flat = Belief(0, np.arange(4), np.zeros(4))
    assert flat.mle_level == 0
    np.testing.assert_allclose(flat.normalized, 0.25)


def test_infer_fixed_stages(kernel, hierarchy, game):
    beliefs = infer_fixed(kernel, hierarchy, 'evader', 3, game, window_w=10)
    assert len(beliefs) == len(game.states)
    assert [b.stage for b in beliefs] == list(range(len(game.states)))
    np.testing.assert_array_equal(beliefs[0].log_likelihoods, 0)
    assert beliefs[0].mle_level == 0
    np.testing.assert_array_equal(beliefs[-1].candidate_levels, [0, 1, 2, 3])
    for b in beliefs:
        assert b.mle_level in b.candidate_levels
        assert b.normalized.sum() == pytest.approx(1)


def test_infer_fixed_windows(kernel, hierarchy, game):
    states = game.states
    n = len(states) - 1
    wide = infer_fixed(kernel, hierarchy, 'evader', 3, states, window_w=n + 50)[-1]
    narrow = infer_fixed(kernel, hierarchy, 'evader', 3, states, window_w=1)[-1]
    for level in range(4):
        full = window_log_likelihood(kernel, hierarchy, 'evader', 3, level, states)
        last = window_log_likelihood(kernel, hierarchy, 'evader', 3, level, states,
                                     start=n - 1)
        assert wide.log_likelihoods[level] == pytest.approx(full.log_likelihood)
        assert narrow.log_likelihoods[level] == pytest.approx(last.log_likelihood)


def test_infer_fixed_errors(kernel, hierarchy, game):
    with pytest.raises(ValueError):
        infer_fixed(kernel, hierarchy, 'evader', 3, game, window_w=0)
    with pytest.raises(ValueError):
        infer_fixed(kernel, hierarchy, 'evader', 3, [], window_w=3)
    with pytest.raises(ValueError):
        infer_fixed(kernel, hierarchy, 'evader', 9, game)
    with pytest.raises(ValueError):
        infer_fixed(kernel, hierarchy, 'evader', 3, game, k_max=7)


def test_indistinguishable_levels(still_evader_kernel):
    # A motionless evader's level leaves no trace in the observed moves
    ladder = build_hierarchy(still_evader_kernel, 3, 3)
    trajectory = rollout(still_evader_kernel, ladder.policy('pursuer', 2),
                         ladder.policy('evader', 2), start, seed=6)
    beliefs = infer_fixed(still_evader_kernel, ladder, 'pursuer', 2, trajectory)
    for b in beliefs:
        assert b.log_likelihoods[1] == b.log_likelihoods[2]
        np.testing.assert_allclose(b.log_likelihoods, b.log_likelihoods[1],
                                   rtol=0, atol=1e-12)
    assert len(beliefs) == len(trajectory.states)


def test_true_level_has_highest_mean_likelihood(kernel, hierarchy):
    totals = np.zeros(4)
    for g in range(200):
        trajectory = rollout(kernel, hierarchy.policy('pursuer', 2),
                             hierarchy.policy('evader', 3), start,
                             seed=game_seed(1, g))
        totals += [
            window_log_likelihood(kernel, hierarchy, 'evader', 3, level,
                                  trajectory.states).log_likelihood
            for level in range(4)
        ]
    assert totals[2] >= totals.max() - 1e-9


def test_heatmap(tmp_path, kernel, hierarchy, game):
    beliefs = infer_fixed(kernel, hierarchy, 'evader', 3, game)
    heatmap = belief_heatmap(beliefs)
    assert heatmap.dims == ('level', 'stage')
    assert heatmap.shape == (4, len(game.states))
    np.testing.assert_allclose(heatmap.sum('level').values, 1)
    path = tmp_path / 'beliefs.csv'
    heatmap_to_csv(beliefs, path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['stage', 'level', 'probability']
    assert len(frame) == 4 * len(game.states)
    assert list(frame.stage[:4]) == [0, 0, 0, 0]
    assert list(frame.level[:4]) == [0, 1, 2, 3]


def test_inference_accuracy_table(kernel, hierarchy):
    table = inference_accuracy(kernel, hierarchy, 'evader', 3, 2, start, n_games=20,
                               windows=(1, 5, 50), seed=2)
    assert list(table.columns) == ['window', 'accuracy', 'games']
    assert list(table.window) == [1, 5, 50]
    assert np.all((table.accuracy >= 0) & (table.accuracy <= 1))
    assert np.all(table.games == 20)


def test_longer_windows_infer_better(kernel, hierarchy):
    n_games = 400
    table = inference_accuracy(kernel, hierarchy, 'evader', 3, 2, start,
                               n_games=n_games, windows=(1, 5, 50), seed=11)
    accuracy = table.accuracy.values
    # three binomial standard errors at p = 1/2
    slack = 3 * np.sqrt(0.25 / n_games)
    assert np.all(np.diff(accuracy) >= -slack)
    assert accuracy[-1] > accuracy[0]


def test_controller_schedule_law(kernel, hierarchy):
    controller = DynamicLevelController(kernel, hierarchy, 'evader', k_max=4,
                                        window_w=3)
    assert controller.level == 1
    trajectory = rollout(kernel, hierarchy.policy('pursuer', 3), controller, start,
                         seed=game_seed(3, 0))
    schedule = controller.schedule
    n = len(schedule.own_levels)
    assert n == len(schedule.inferred_levels)
    assert n == trajectory.steps - (0 if trajectory.truncated else 1)
    if n:
        assert schedule.own_levels[0] == 1
        expected = np.minimum(schedule.inferred_levels[:-1] + 1, 4)
        np.testing.assert_array_equal(schedule.own_levels[1:], expected)
    np.testing.assert_array_equal(trajectory.levels[:n, 1], schedule.own_levels)
    np.testing.assert_array_equal(trajectory.levels[:, 0], 3)


def test_controller_matches_window_likelihood(kernel, hierarchy):
    w = 2
    for g in range(20):
        controller = DynamicLevelController(kernel, hierarchy, 'evader', k_max=4,
                                            window_w=w)
        trajectory = rollout(kernel, hierarchy.policy('pursuer', 1), controller,
                             start, seed=game_seed(4, g))
        if trajectory.steps >= 4:
            break
    own = trajectory.levels[:, 1]
    for belief in controller.beliefs:
        n = belief.stage
        for level in range(4):
            expected = window_log_likelihood(kernel, hierarchy, 'evader', own, level,
                                             trajectory.states, start=max(0, n - w),
                                             stop=n)
            assert belief.log_likelihoods[level] == pytest.approx(
                expected.log_likelihood, abs=1e-10)


def test_controller_clamped_at_one(kernel, hierarchy):
    controller = DynamicLevelController(kernel, hierarchy, 'pursuer', k_max=1)
    trajectory = rollout(kernel, controller, hierarchy.policy('evader', 4), start,
                         seed=9)
    np.testing.assert_array_equal(trajectory.levels[:, 0], 1)
    assert np.all(controller.schedule.inferred_levels == 0)


def test_controller_reset(kernel, hierarchy):
    controller = DynamicLevelController(kernel, hierarchy, 'evader')
    with pytest.raises(ValueError):
        controller.observe(kernel.index(start))
    controller.reset(kernel.index(start))
    assert controller.level == 1
    assert len(controller.schedule.own_levels) == 0


def test_controller_needs_deep_hierarchy(kernel, hierarchy):
    with pytest.raises(ValueError):
        DynamicLevelController(kernel, hierarchy, 'evader', k_max=6)
    with pytest.raises(ValueError):
        DynamicLevelController(kernel, hierarchy, 'evader', window_w=0)


def test_two_controllers(kernel, hierarchy):
    pursuer = DynamicLevelController(kernel, hierarchy, 'pursuer', k_max=3)
    evader = DynamicLevelController(kernel, hierarchy, 'evader', k_max=3)
    trajectory = rollout(kernel, pursuer, evader, start, seed=1)
    assert trajectory.outcome is not None or trajectory.truncated
    assert np.all((trajectory.levels >= 1) & (trajectory.levels <= 3))


@pytest.mark.slow
def test_recovers_level_two_on_bundled_world(bundled):
    config, kernel, ladder = bundled
    table = inference_accuracy(kernel, ladder, 'evader', 3, 2,
                               config.start_state(), n_games=200,
                               windows=(10 ** 6,), k_max=3, seed=11)
    assert table.accuracy[0] >= 0.7


@pytest.mark.slow
def test_controller_settles_one_above_opponent(bundled):
    config, kernel, ladder = bundled
    final = []
    for g in range(100):
        controller = DynamicLevelController(kernel, ladder, 'pursuer', k_max=5)
        rollout(kernel, controller, ladder.policy('evader', 3), config.start_state(),
                seed=game_seed(5, g))
        final.append(controller.level)
    assert final.count(4) > 50
