from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import pandas as pd
import xarray as xr
from astropy import log
from tqdm.auto import tqdm

from .levelk import opponent

__all__ = [
    'Belief',
    'LevelSchedule',
    'DynamicLevelController',
    'LOG_FLOOR',
    'transition_probability',
    'window_log_likelihood',
    'infer_fixed',
    'belief_heatmap',
    'heatmap_to_csv',
    'inference_accuracy'
]

# Log-likelihood charged for a transition the hypothesis cannot produce
LOG_FLOOR = -50.0

LogLikelihood = namedtuple('LogLikelihood', ['log_likelihood', 'floored'])


@dataclass(frozen=True, eq=False)
class Belief:
    """
    Log-likelihood of each opponent-level hypothesis at one stage.
    """
    stage: int
    candidate_levels: np.ndarray
    log_likelihoods: np.ndarray
    floored: int = 0

    @property
    def mle_level(self):
        """Most likely level; ties go to the lowest level."""
        return int(self.candidate_levels[np.argmax(self.log_likelihoods)])

    @property
    def normalized(self):
        """Likelihoods normalized to sum to one."""
        weights = np.exp(self.log_likelihoods - np.max(self.log_likelihoods))
        return weights / weights.sum()


@dataclass(frozen=True, eq=False)
class LevelSchedule:
    """
    Levels of a dynamic-level agent.

    ``own_levels[n]`` is the level played at stage n and
    ``inferred_levels[n]`` the opponent level inferred once the transition
    out of stage n is observed, so that
    ``own_levels[n] = min(inferred_levels[n - 1] + 1, k_max)``.
    """
    own_levels: np.ndarray
    inferred_levels: np.ndarray
    k_max: int

    def to_dataframe(self):
        return pd.DataFrame(dict(
            stage=np.arange(len(self.own_levels)),
            own_level=self.own_levels, inferred_level=self.inferred_levels
        ))

    def to_csv(self, path):
        self.to_dataframe().to_csv(path, index=False)


def _pair_tables(hierarchy, agent, my_level, opp_level):
    mine = hierarchy.policy(agent, my_level).table
    theirs = hierarchy.policy(opponent(agent), opp_level).table
    return (mine, theirs) if agent == 'pursuer' else (theirs, mine)


def _step_probabilities(kernel, pursuer_table, evader_table, sources, targets):
    rows = kernel.interior_lookup[sources]
    if np.any(rows < 0):
        raise ValueError("Observed a transition out of a terminal state.")
    match = kernel.successors[rows] == targets[:, None]
    stencil = np.einsum(
        'ni,nj,nijk->nk', pursuer_table[sources], evader_table[sources],
        kernel.probs[rows]
    )
    return (stencil * match).sum(axis=1)


def transition_probability(kernel, pursuer_policy, evader_policy, state, next_state):
    """
    Probability of moving from ``state`` to ``next_state`` in one step when
    both agents draw their actions from the given policies.
    """
    sources = np.array([kernel.index(state)])
    targets = np.array([kernel.index(next_state)])
    return float(_step_probabilities(
        kernel, pursuer_policy.table, evader_policy.table, sources, targets
    )[0])


def _transition_terms(kernel, hierarchy, agent, my_levels, opp_level, states):
    """Floored per-transition log-probabilities and their floor flags."""
    states = np.asarray(states, dtype=np.int64)
    n = len(states) - 1
    if np.ndim(my_levels) == 0:
        my_levels = np.broadcast_to(np.asarray(my_levels, dtype=np.int64), (n,))
    else:
        my_levels = np.asarray(my_levels, dtype=np.int64)
        if len(my_levels) < n:
            raise ValueError(f"{len(my_levels)} observer levels given for {n} "
                             f"transitions.")
        my_levels = my_levels[:n]
    probs = np.zeros(n)
    for level in np.unique(my_levels):
        steps = np.flatnonzero(my_levels == level)
        probs[steps] = _step_probabilities(
            kernel, *_pair_tables(hierarchy, agent, int(level), opp_level),
            states[steps], states[steps + 1]
        )
    with np.errstate(divide='ignore'):
        terms = np.log(probs)
    floored = terms < LOG_FLOOR
    return np.where(floored, LOG_FLOOR, terms), floored


def window_log_likelihood(kernel, hierarchy, agent, my_levels, opp_level, states,
                          start=0, stop=None):
    """
    Log-likelihood of the transitions ``start..stop-1`` of an observed
    state sequence under one opponent-level hypothesis.

    Parameters
    ----------
    kernel : ~brpeg.TransitionKernel
        Discretized game
    hierarchy : ~brpeg.Hierarchy
        Solved level-k ladder
    agent : {'pursuer', 'evader'}
        The observing agent
    my_levels : int or array of int
        Observer's level, constant or one entry per transition
    opp_level : int
        Hypothesized opponent level
    states : array of int
        Observed flat state indices
    start, stop : int (optional)
        Transition range; transition n goes from ``states[n]`` to
        ``states[n + 1]``

    Returns
    -------
    result : LogLikelihood
        Summed log-likelihood and the number of transitions charged
        ``LOG_FLOOR``
    """
    states = np.asarray(states, dtype=np.int64)
    if stop is None:
        stop = len(states) - 1
    if not 0 <= start <= stop <= len(states) - 1:
        raise ValueError(f"Transition range [{start}, {stop}) outside the "
                         f"{len(states) - 1} observed transitions.")
    levels = my_levels if np.ndim(my_levels) == 0 else \
        np.asarray(my_levels)[start:stop]
    terms, floored = _transition_terms(kernel, hierarchy, agent, levels,
                                       opp_level, states[start:stop + 1])
    return LogLikelihood(float(terms.sum()), int(floored.sum()))


def _candidates(hierarchy, agent, k_max):
    if k_max is None:
        k_max = hierarchy.k_max[agent]
    if k_max < 1:
        raise ValueError("k_max must be at least 1.")
    top = hierarchy.depth(opponent(agent))
    if k_max - 1 > top:
        raise ValueError(f"Opponent levels up to {k_max - 1} are needed but the "
                         f"hierarchy stops at {top}.")
    return int(k_max), np.arange(k_max)


def infer_fixed(kernel, hierarchy, agent, my_level, trajectory, window_w=10,
                k_max=None):
    """
    Maximum-likelihood opponent level at every stage of a trajectory,
    with the observer's own level held constant.

    The belief at stage N uses the last min(N, ``window_w``) transitions.

    Parameters
    ----------
    kernel : ~brpeg.TransitionKernel
        Discretized game
    hierarchy : ~brpeg.Hierarchy
        Solved level-k ladder
    agent : {'pursuer', 'evader'}
        The observing agent
    my_level : int
        Observer's own level
    trajectory : ~brpeg.Trajectory or array of int
        Observed game
    window_w : int
        Window length in transitions
    k_max : int or None (optional)
        Observer's maximum level; candidates are 0..k_max - 1

    Returns
    -------
    beliefs : list of ~brpeg.Belief
        One per stage, 0 through the number of transitions
    """
    if window_w < 1:
        raise ValueError("window_w must be at least 1.")
    k_max, candidates = _candidates(hierarchy, agent, k_max)
    if not 0 <= my_level <= hierarchy.depth(agent):
        raise ValueError(f"Level {my_level} of the {agent} is not in the hierarchy.")
    states = getattr(trajectory, 'states', trajectory)
    states = np.asarray(states, dtype=np.int64)
    if len(states) == 0:
        raise ValueError("Cannot infer from an empty trajectory.")
    terms, floors = zip(*[
        _transition_terms(kernel, hierarchy, agent, my_level, level, states)
        for level in candidates
    ])
    cumulative = np.concatenate(
        [np.zeros((len(candidates), 1)), np.cumsum(np.array(terms), axis=1)], axis=1
    )
    floored = np.concatenate(
        [np.zeros((len(candidates), 1), dtype=int),
         np.cumsum(np.array(floors), axis=1)], axis=1
    )
    beliefs = []
    for stage in range(len(states)):
        first = max(0, stage - window_w)
        beliefs.append(Belief(
            stage, candidates,
            cumulative[:, stage] - cumulative[:, first],
            int((floored[:, stage] - floored[:, first]).sum())
        ))
    return beliefs


def belief_heatmap(beliefs):
    """
    Normalized likelihoods as a (level, stage) `~xarray.DataArray`.
    """
    return xr.DataArray(
        np.stack([b.normalized for b in beliefs], axis=1),
        dims=('level', 'stage'),
        coords=dict(level=beliefs[0].candidate_levels,
                    stage=[b.stage for b in beliefs]),
        name='probability'
    )


def heatmap_to_csv(heatmap, path):
    """Write heatmap data as (stage, level, probability) rows."""
    if not isinstance(heatmap, xr.DataArray):
        heatmap = belief_heatmap(heatmap)
    frame = heatmap.rename('probability').to_dataframe().reset_index()
    frame[['stage', 'level', 'probability']].sort_values(
        ['stage', 'level']
    ).to_csv(path, index=False, float_format='%.17g')


class DynamicLevelController(object):
    """
    Agent that re-infers its opponent's level from a sliding window and
    plays one level above it, capped at its own ``k_max``.

    Before any evidence the opponent is assumed to be level 0, so the first
    stage is played at level 1. Used as a player in `~brpeg.rollout`.
    """
    def __init__(self, kernel, hierarchy, agent, k_max=None, window_w=10):
        if window_w < 1:
            raise ValueError("window_w must be at least 1.")
        self.kernel = kernel
        self.hierarchy = hierarchy
        self.agent = agent
        self.k_max, self.candidates = _candidates(hierarchy, agent, k_max)
        if self.k_max > hierarchy.depth(agent):
            raise ValueError(f"The hierarchy stops at level "
                             f"{hierarchy.depth(agent)} for the {agent}.")
        self.window_w = int(window_w)
        self.reset(None)

    def reset(self, state):
        self._states = [] if state is None else [int(state)]
        self._own = [min(1, self.k_max)]
        self._inferred = []
        self._terms = []
        self.beliefs = []

    @property
    def level(self):
        """Level to play at the current stage."""
        return self._own[-1]

    @property
    def policy(self):
        return self.hierarchy.policy(self.agent, self.level)

    def observe(self, state):
        """
        Record the next state, update the opponent-level estimate and
        choose the level for the coming stage.

        Returns
        -------
        level : int
        """
        if not self._states:
            raise ValueError("Call reset() with the start state first.")
        state = int(state)
        pair = np.array([self._states[-1], state])
        terms = np.array([
            _transition_terms(self.kernel, self.hierarchy, self.agent,
                              self.level, level, pair)[0][0]
            for level in self.candidates
        ])
        self._states.append(state)
        self._terms.append(terms)
        window = np.array(self._terms[-self.window_w:])
        belief = Belief(len(self._states) - 1, self.candidates, window.sum(axis=0),
                        int((window <= LOG_FLOOR).sum()))
        self.beliefs.append(belief)
        inferred = belief.mle_level
        self._inferred.append(inferred)
        self._own.append(min(inferred + 1, self.k_max))
        log.debug(f"{self.agent} stage {len(self._inferred)}: inferred "
                  f"{inferred}, next level {self._own[-1]}")
        return self._own[-1]

    @property
    def schedule(self):
        n = len(self._inferred)
        return LevelSchedule(np.array(self._own[:n], dtype=np.int64),
                             np.array(self._inferred, dtype=np.int64), self.k_max)


def inference_accuracy(kernel, hierarchy, observer, observer_level, true_level,
                       s0, n_games=200, windows=(1, 2, 5, 10, 20), seed=0,
                       max_steps=None, k_max=None, progress=False):
    """
    Frequency with which the end-of-game MLE recovers the opponent's true
    level, per window length.

    Returns
    -------
    accuracy : ~pandas.DataFrame
        Columns window, accuracy and games
    """
    from .simulate import rollout, game_seed

    players = {
        observer: hierarchy.policy(observer, observer_level),
        opponent(observer): hierarchy.policy(opponent(observer), true_level)
    }
    hits = np.zeros(len(windows), dtype=int)
    for game in tqdm(range(n_games), disable=not progress, desc='games'):
        trajectory = rollout(kernel, players['pursuer'], players['evader'], s0,
                             seed=game_seed(seed, game, (true_level,)),
                             max_steps=max_steps)
        for i, w in enumerate(windows):
            last = infer_fixed(kernel, hierarchy, observer, observer_level,
                               trajectory, window_w=w, k_max=k_max)[-1]
            hits[i] += last.mle_level == true_level
    return pd.DataFrame(dict(window=list(windows), accuracy=hits / n_games,
                             games=n_games))
