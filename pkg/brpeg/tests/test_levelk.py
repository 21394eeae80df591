import pytest
import numpy as np
import astropy.units as u
from scipy import sparse

from .. import levelk
from ..grid import WindField, AgentSpec, JointState, speed_unit, noise_unit
from ..mcam import JointAction, build_kernel, transition_probs
from ..levelk import (
    Policy, Hierarchy, ConvergenceError, level0_policy, policy_evaluation,
    best_response, build_hierarchy, nash_check, absorption_probabilities,
    opponent
)
from .conftest import desk_arena


def random_mixed(kernel, agent, seed):
    rng = np.random.default_rng(seed)
    n = kernel.n_actions[0 if agent == 'pursuer' else 1]
    return Policy(agent, rng.dirichlet(np.ones(n), size=kernel.n_states),
                  kernel.interior)


def random_pure(kernel, agent, rng):
    n = kernel.n_actions[0 if agent == 'pursuer' else 1]
    return Policy.from_actions(agent, rng.integers(n, size=kernel.n_interior), n,
                               kernel.interior, kernel.n_states)


def oracle_matrices(kernel, opp_policy, agent):
    """Own-action transition matrices against a fixed opponent, state by state."""
    n_p, n_e = kernel.n_actions
    n_own = n_p if agent == 'pursuer' else n_e
    entries = [([], [], []) for _ in range(n_own)]
    for index in kernel.interior:
        state = kernel.state(index)
        for i in range(n_p):
            for j in range(n_e):
                own, opp = (i, j) if agent == 'pursuer' else (j, i)
                weight = opp_policy.table[index, opp]
                rows, cols, data = entries[own]
                probs = transition_probs(kernel.grid, kernel.wind, kernel.agents,
                                         state, JointAction(i, j))
                for successor, p in probs.items():
                    rows.append(index)
                    cols.append(kernel.index(successor))
                    data.append(weight * p)
    shape = (kernel.n_states, kernel.n_states)
    return [sparse.csr_matrix((data, (rows, cols)), shape=shape)
            for rows, cols, data in entries]


def backward_induction(kernel, opp_policy, agent, horizon=3000):
    matrices = oracle_matrices(kernel, opp_policy, agent)
    sign = 1.0 if agent == 'pursuer' else -1.0
    terminal = ~kernel.interior_mask
    values = np.where(terminal, sign * kernel.rewards, 0.0)
    for _ in range(horizon):
        q = np.stack([m @ values for m in matrices])
        values = np.where(terminal, values, q.max(axis=0))
    states = np.arange(kernel.n_states)
    actions = np.stack([m @ values for m in matrices]).argmax(axis=0)
    # mass still inside after the horizon under the greedy policy
    alive = (~terminal).astype(float)
    for _ in range(horizon):
        alive = np.stack([m @ alive for m in matrices])[actions, states]
        alive[terminal] = 0.0
    return values, alive.max()


def test_opponent():
    assert opponent('pursuer') == 'evader'
    assert opponent('evader') == 'pursuer'
    with pytest.raises(ValueError):
        opponent('referee')


def test_level0_uniform(kernel):
    policy = level0_policy(kernel, 'pursuer')
    np.testing.assert_allclose(policy.table[kernel.interior], 0.25)
    assert policy.kind == 'mixed'
    assert policy.level == 0
    with pytest.raises(ValueError):
        level0_policy(kernel, 'pursuer', 'cautious')


def test_level0_safe_uniform(calm_kernel):
    pursuer = level0_policy(calm_kernel, 'pursuer', 'safe_uniform')
    evader = level0_policy(calm_kernel, 'evader', 'safe_uniform')
    corner = calm_kernel.index(JointState((1, 1), (3, 3)))
    # pursuer in the lower-left pocket: west and south lead into the wall
    np.testing.assert_allclose(pursuer.table[corner], [0.5, 0.5, 0, 0], atol=1e-15)
    # evader in the upper-right pocket: east and north lead into the wall
    np.testing.assert_allclose(evader.table[corner], [0, 0, 0.5, 0.5], atol=1e-15)
    open_space = calm_kernel.index(JointState((2, 2), (1, 3)))
    np.testing.assert_allclose(pursuer.table[open_space], 0.25)


def test_policy_validation(kernel):
    table = np.full((kernel.n_states, 4), 0.3)
    with pytest.raises(ValueError):
        Policy('pursuer', table, kernel.interior)
    with pytest.raises(ValueError):
        Policy('pursuer', np.full((kernel.n_states, 4), 0.25), kernel.interior,
               kind='pure')
    mixed = level0_policy(kernel, 'evader')
    with pytest.raises(ValueError):
        mixed.actions


def test_forced_capture():
    grid = desk_arena()
    agents = (AgentSpec(headings=[0] * u.deg), AgentSpec(speed=0 * speed_unit))
    kernel = build_kernel(grid, WindField.zeros(grid, sigma_w=0 * noise_unit), agents)
    p = level0_policy(kernel, 'pursuer')
    e = level0_policy(kernel, 'evader')
    s = kernel.index(JointState((1, 2), (2, 2)))
    assert policy_evaluation(kernel, p, e).values[s] == 1
    assert policy_evaluation(kernel, e, p).values[s] == -1


def test_values_bounded_and_pinned(kernel):
    p = level0_policy(kernel, 'pursuer')
    e = level0_policy(kernel, 'evader', 'safe_uniform')
    value = policy_evaluation(kernel, p, e, tol=1e-12)
    assert np.all(np.abs(value.values) <= 1 + 1e-12)
    terminal = ~kernel.interior_mask
    np.testing.assert_array_equal(value.values[terminal], kernel.rewards[terminal])
    assert value.iterations > 0


def test_zero_sum_consistency(kernel):
    p = random_mixed(kernel, 'pursuer', 1)
    e = random_mixed(kernel, 'evader', 2)
    tol = 1e-10
    pursuer_side = policy_evaluation(kernel, p, e, tol=tol)
    evader_side = policy_evaluation(kernel, e, p, tol=tol)
    np.testing.assert_allclose(pursuer_side.values, -evader_side.values, atol=2 * tol)
    np.testing.assert_allclose(evader_side.pursuer_view, pursuer_side.values,
                               atol=2 * tol)


def test_iterate_matches_direct(kernel):
    p = random_mixed(kernel, 'pursuer', 3)
    e = random_mixed(kernel, 'evader', 4)
    iterated = policy_evaluation(kernel, p, e, tol=1e-13)
    direct = policy_evaluation(kernel, p, e, method='direct')
    np.testing.assert_allclose(iterated.values, direct.values, atol=1e-10)
    with pytest.raises(ValueError):
        policy_evaluation(kernel, p, e, method='guess')
    with pytest.raises(ValueError):
        policy_evaluation(kernel, p, p)


def test_swapping_roles(calm_kernel):
    # Calm wind and uniform play treat both agents alike, so swapping their
    # cells negates the value up to the capture mass, which pays +1 either way
    p = level0_policy(calm_kernel, 'pursuer')
    e = level0_policy(calm_kernel, 'evader')
    value = policy_evaluation(calm_kernel, p, e, method='direct').values
    capture = absorption_probabilities(calm_kernel, p, e).sel(outcome='CAPTURE').values
    for index in calm_kernel.interior:
        mirror = calm_kernel.index(calm_kernel.state(index).swapped())
        assert value[index] + value[mirror] == pytest.approx(2 * capture[index],
                                                             abs=1e-10)


def test_absorption_probabilities(kernel):
    p = random_mixed(kernel, 'pursuer', 5)
    e = random_mixed(kernel, 'evader', 6)
    absorbed = absorption_probabilities(kernel, p, e)
    assert absorbed.dims == ('outcome', 'state')
    np.testing.assert_allclose(absorbed.sum('outcome').values, 1, atol=1e-10)
    mass = {name: absorbed.sel(outcome=name).values
            for name in absorbed.outcome.values}
    expected = (mass['CAPTURE'] + mass['CRASH_EVADER'] -
                mass['EVASION'] - mass['CRASH_PURSUER'])
    value = policy_evaluation(kernel, p, e, method='direct')
    np.testing.assert_allclose(expected, value.values, atol=1e-10)
    iterated = absorption_probabilities(kernel, p, e, method='iterate')
    np.testing.assert_allclose(iterated.values, absorbed.values, atol=1e-9)


def test_absorption_solver_follows_interior_size(kernel, monkeypatch):
    p = random_mixed(kernel, 'pursuer', 7)
    e = random_mixed(kernel, 'evader', 8)
    direct = absorption_probabilities(kernel, p, e, method='direct')
    iterated = absorption_probabilities(kernel, p, e, method='iterate')
    assert kernel.n_interior <= levelk.direct_solve_limit
    np.testing.assert_array_equal(absorption_probabilities(kernel, p, e).values,
                                  direct.values)
    monkeypatch.setattr(levelk, 'direct_solve_limit', kernel.n_interior - 1)
    auto = absorption_probabilities(kernel, p, e)
    np.testing.assert_array_equal(auto.values, iterated.values)
    np.testing.assert_allclose(auto.values, direct.values, atol=1e-9)
    with pytest.raises(ValueError, match='Unknown method'):
        absorption_probabilities(kernel, p, e, method='guess')


@pytest.mark.parametrize('agent', ['pursuer', 'evader'])
def test_best_response_matches_backward_induction(kernel, agent):
    opp = random_mixed(kernel, opponent(agent), 7)
    _, value = best_response(kernel, opp, tol=1e-13)
    oracle, alive = backward_induction(kernel, opp, agent)
    assert alive < 1e-10
    np.testing.assert_allclose(value.values, oracle, atol=1e-6)


@pytest.mark.parametrize('agent', ['pursuer', 'evader'])
def test_best_response_against_level0(kernel, agent):
    opp = level0_policy(kernel, opponent(agent))
    _, value = best_response(kernel, opp, agent, tol=1e-13)
    oracle, _ = backward_induction(kernel, opp, agent)
    np.testing.assert_allclose(value.values, oracle, atol=1e-6)


def check_dominance(kernel, agent, n_opponents, n_alternatives, seed):
    rng = np.random.default_rng(seed)
    for k in range(n_opponents):
        opp = random_mixed(kernel, opponent(agent), seed + k)
        best, _ = best_response(kernel, opp, agent, tol=1e-13)
        assert best.is_pure
        best_value = policy_evaluation(kernel, best, opp, method='direct').values
        for _ in range(n_alternatives):
            alt = random_pure(kernel, agent, rng)
            alt_value = policy_evaluation(kernel, alt, opp, method='direct').values
            assert np.all(best_value >= alt_value - 1e-9)


@pytest.mark.parametrize('agent', ['pursuer', 'evader'])
def test_best_response_dominates(kernel, agent):
    check_dominance(kernel, agent, 10, 50, seed=100)


@pytest.mark.slow
@pytest.mark.parametrize('agent', ['pursuer', 'evader'])
def test_best_response_dominates_exhaustive(kernel, agent):
    check_dominance(kernel, agent, 50, 200, seed=1000)


def test_best_response_deterministic(kernel):
    opp = level0_policy(kernel, 'evader', 'safe_uniform')
    first, v1 = best_response(kernel, opp)
    again, v2 = best_response(kernel, opp)
    assert first.agent == 'pursuer'
    assert first.same_actions(again)
    np.testing.assert_array_equal(v1.values, v2.values)
    with pytest.raises(ValueError):
        best_response(kernel, opp, 'evader')


def test_ties_go_to_lowest_action(still_evader_kernel):
    # The evader cannot move, so all of its actions are worth the same
    p = level0_policy(still_evader_kernel, 'pursuer')
    policy, _ = best_response(still_evader_kernel, p)
    np.testing.assert_array_equal(policy.actions, 0)


def test_convergence_error(kernel):
    opp = level0_policy(kernel, 'evader')
    with pytest.raises(ConvergenceError) as excinfo:
        best_response(kernel, opp, max_iterations=1)
    assert excinfo.value.residual > 0
    assert excinfo.value.iterations == 1


def test_singular_direct_solve():
    grid = desk_arena()
    # Noiseless wind blows east in column 1 and west in columns 2 and 3, so
    # agents in different rows shuttle between columns 1 and 2 forever
    wx = np.zeros(grid.shape)
    wx[1], wx[2], wx[3] = 1, -1, -1
    wind = WindField(wx * speed_unit, np.zeros(grid.shape) * speed_unit,
                     sigma_w=0 * noise_unit)
    still = AgentSpec(speed=0 * speed_unit)
    kernel = build_kernel(grid, wind, (still, still))
    p = level0_policy(kernel, 'pursuer')
    e = level0_policy(kernel, 'evader')
    with pytest.raises(ConvergenceError):
        policy_evaluation(kernel, p, e, method='direct')


def test_hierarchy_structure(kernel, hierarchy):
    assert hierarchy.depth('pursuer') == 4
    assert hierarchy.depth('evader') == 4
    assert hierarchy.k_max == dict(pursuer=4, evader=4)
    level1, _ = best_response(kernel, hierarchy.policy('evader', 0), 'pursuer',
                              tol=1e-11)
    assert hierarchy.policy('pursuer', 1).same_actions(level1)
    for agent in ['pursuer', 'evader']:
        for level in range(1, 5):
            policy = hierarchy.policy(agent, level)
            assert policy.is_pure
            assert policy.level == level
            expected, _ = best_response(
                kernel, hierarchy.policy(opponent(agent), level - 1), agent,
                tol=1e-11
            )
            assert policy.same_actions(expected)
    with pytest.raises(ValueError):
        hierarchy.policy('pursuer', 5)
    with pytest.raises(ValueError):
        hierarchy.value('evader', 0)


@pytest.mark.parametrize('k_max, depth', [
    ((1, 1), (1, 1)),
    ((5, 3), (5, 4)),
    ((2, 4), (3, 4)),
])
def test_hierarchy_depth(kernel, k_max, depth):
    ladder = build_hierarchy(kernel, *k_max)
    assert (ladder.depth('pursuer'), ladder.depth('evader')) == depth


def test_hierarchy_needs_a_level(kernel):
    with pytest.raises(ValueError):
        build_hierarchy(kernel, 0, 2)


def test_fixed_point_is_nash(still_evader_kernel):
    ladder = build_hierarchy(still_evader_kernel, 3, 3)
    assert ladder.fixed_point == (1, 'pursuer')
    assert ladder.nash.is_nash
    assert ladder.nash.max_gain <= 1e-6
    report = nash_check(still_evader_kernel, ladder.policy('pursuer', 1),
                        ladder.policy('evader', 2))
    assert report == ladder.nash


def test_fixed_point_certificate(kernel, hierarchy):
    if hierarchy.fixed_point_level is None:
        assert hierarchy.nash is None
        return
    K, agent = hierarchy.fixed_point
    assert hierarchy.policy(agent, K + 2).same_actions(hierarchy.policy(agent, K))
    assert hierarchy.nash.is_nash
    assert hierarchy.nash.max_gain <= 1e-6


def test_nash_check_rejects_level0(kernel, hierarchy):
    report = nash_check(kernel, hierarchy.policy('pursuer', 1),
                        hierarchy.policy('evader', 0))
    assert not report.is_nash
    assert report.evader_gain > 0
    assert report == nash_check(kernel, hierarchy.policy('pursuer', 1),
                                hierarchy.policy('evader', 0))


def test_hierarchy_round_trip(tmp_path, kernel, hierarchy):
    path = tmp_path / 'hierarchy.nc'
    hierarchy.save(path)
    loaded = Hierarchy.load(path, kernel=kernel)
    assert loaded.k_max == hierarchy.k_max
    assert loaded.fixed_point == hierarchy.fixed_point
    assert loaded.nash == hierarchy.nash
    for agent in ['pursuer', 'evader']:
        for level in range(hierarchy.depth(agent) + 1):
            np.testing.assert_array_equal(loaded.policy(agent, level).table,
                                          hierarchy.policy(agent, level).table)
        np.testing.assert_array_equal(loaded.value(agent, 2).values,
                                      hierarchy.value(agent, 2).values)
    assert loaded.summary() == hierarchy.summary()


def test_hierarchy_rejects_other_kernel(tmp_path, hierarchy, calm_kernel):
    path = tmp_path / 'hierarchy.nc'
    hierarchy.save(path)
    with pytest.raises(ValueError):
        Hierarchy.load(path, kernel=calm_kernel)


def test_hierarchy_csv(tmp_path, kernel, hierarchy):
    import pandas as pd
    paths = hierarchy.to_csv(tmp_path / 'policies')
    assert len(paths) == 10
    frame = pd.read_csv(tmp_path / 'policies' / 'policy-evader-k3.csv')
    assert list(frame.columns) == ['state', 'p_0', 'p_1', 'p_2', 'p_3', 'value']
    assert len(frame) == kernel.n_interior
    np.testing.assert_array_equal(frame.value.values,
                                  hierarchy.value('evader', 3).values[kernel.interior])
    level0 = pd.read_csv(tmp_path / 'policies' / 'policy-pursuer-k0.csv')
    assert 'value' not in level0.columns
