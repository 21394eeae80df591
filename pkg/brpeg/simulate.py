import json
from dataclasses import dataclass, field, fields

import numpy as np
import pandas as pd
from astropy.table import Table
from tqdm.auto import tqdm

from .grid import TerminalClass, JointState, joint_index, joint_state, classify_state
from .levelk import Policy, opponent, absorption_probabilities

__all__ = [
    'Trajectory',
    'MatchStats',
    'LevelMatrix',
    'rollout',
    'run_match',
    'game_seed',
    'match_table',
    'level_matrix_experiment'
]

# Row labels of the win tables, in print order
table_rows = [
    ('Pursuer Wins', 'pursuer_wins'),
    ('Due to Capture', 'wins_by_capture'),
    ('Due to Evader Crash', 'wins_by_evader_crash'),
    ('Evader Wins', 'evader_wins'),
    ('Due to Evasion', 'wins_by_evasion'),
    ('Due to Pursuer Crash', 'wins_by_pursuer_crash'),
    ('Draws', 'draws'),
]


@dataclass(eq=False)
class Trajectory:
    """
    One played game.

    ``states`` holds flat joint-state indices from the start state to the
    absorbing state (or the last state reached, if truncated). ``actions``
    and ``levels`` hold one (pursuer, evader) row per transition; levels are
    -1 where a player has no rationality level. ``elapsed`` is the running
    sum of holding times.
    """
    states: np.ndarray
    actions: np.ndarray
    outcome: TerminalClass = None
    truncated: bool = False
    elapsed: np.ndarray = None
    levels: np.ndarray = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1, 2)
        if len(self.actions) != len(self.states) - 1:
            raise ValueError("A trajectory needs one action pair per transition.")
        if self.elapsed is None:
            self.elapsed = np.full(len(self.states), np.nan)
        if self.levels is None:
            self.levels = np.full((self.steps, 2), -1, dtype=np.int64)

    @property
    def steps(self):
        return len(self.actions)

    def joint_states(self, grid):
        return [joint_state(grid, s) for s in self.states]

    def to_dataframe(self, grid):
        """
        One row per visited state; the action and level columns of the last
        row are -1.
        """
        px, py, ex, ey = np.unravel_index(self.states, grid.state_shape)
        pad = np.full((1, 2), -1, dtype=np.int64)
        actions = np.concatenate([self.actions, pad])
        levels = np.concatenate([self.levels, pad])
        return pd.DataFrame(dict(
            step=np.arange(len(self.states)), state=self.states,
            pursuer_x=px, pursuer_y=py, evader_x=ex, evader_y=ey,
            pursuer_action=actions[:, 0], evader_action=actions[:, 1],
            pursuer_level=levels[:, 0], evader_level=levels[:, 1],
            elapsed=self.elapsed
        ))

    def to_csv(self, path, grid):
        self.to_dataframe(grid).to_csv(path, index=False, float_format='%.17g')

    @classmethod
    def from_dataframe(cls, frame, grid):
        """
        Rebuild a trajectory from its cell columns; the remaining columns
        are optional.
        """
        if len(frame) == 0:
            raise ValueError("Trajectory table is empty.")
        cells = frame[['pursuer_x', 'pursuer_y', 'evader_x', 'evader_y']].values
        states = [
            joint_index(grid, JointState(row[:2], row[2:])) for row in cells
        ]
        n = len(states) - 1
        actions = np.full((n, 2), -1, dtype=np.int64)
        if {'pursuer_action', 'evader_action'} <= set(frame.columns):
            actions = frame[['pursuer_action', 'evader_action']].values[:n]
        levels = None
        if {'pursuer_level', 'evader_level'} <= set(frame.columns):
            levels = frame[['pursuer_level', 'evader_level']].values[:n]
        elapsed = frame['elapsed'].values if 'elapsed' in frame.columns else None
        last = classify_state(grid, JointState(cells[-1][:2], cells[-1][2:]))
        outcome = last if last.is_terminal else None
        return cls(states, actions, outcome=outcome, truncated=outcome is None,
                   elapsed=elapsed, levels=levels)

    @classmethod
    def from_csv(cls, path, grid):
        return cls.from_dataframe(pd.read_csv(path), grid)


def _pick(row, draw):
    return min(int(np.searchsorted(np.cumsum(row), draw, side='right')),
               len(row) - 1)


def _is_controller(player):
    return not isinstance(player, Policy)


def rollout(kernel, pursuer, evader, s0, seed=0, max_steps=None):
    """
    Play one game on the discretized kernel.

    At every step each player's action is drawn from its policy row, then
    the successor is drawn from the kernel. Each step consumes three
    uniform draws (pursuer action, evader action, successor) from a Philox
    generator.

    Parameters
    ----------
    kernel : ~brpeg.TransitionKernel
        Discretized game
    pursuer, evader : ~brpeg.Policy or ~brpeg.DynamicLevelController
        Players
    s0 : ~brpeg.JointState or int
        Interior start state
    seed : int or ~numpy.random.SeedSequence
        Generator key
    max_steps : int or None (optional)
        Truncation bound, by default 50 (width + height)

    Returns
    -------
    trajectory : ~brpeg.Trajectory
    """
    state = kernel.index(s0)
    if kernel.is_terminal(state):
        raise ValueError(f"Start state {kernel.state(state)} is terminal "
                         f"({kernel.classify(state).name}).")
    if max_steps is None:
        max_steps = 50 * (kernel.grid.width + kernel.grid.height)
    rng = np.random.Generator(np.random.Philox(seed))
    players = (pursuer, evader)
    for player in players:
        if _is_controller(player):
            player.reset(state)

    states, actions, levels, elapsed = [state], [], [], [0.0]
    outcome = None
    for _ in range(max_steps):
        draws = rng.random(3)
        policies = [p.policy if _is_controller(p) else p for p in players]
        pa = _pick(policies[0].table[state], draws[0])
        ea = _pick(policies[1].table[state], draws[1])
        successors, probs = kernel.row(state, pa, ea)
        dt = kernel.holding_times[kernel.interior_lookup[state]]
        state = int(successors[_pick(probs, draws[2])])
        states.append(state)
        actions.append((pa, ea))
        levels.append([-1 if p.level is None else p.level for p in policies])
        elapsed.append(elapsed[-1] + dt)
        if kernel.is_terminal(state):
            outcome = kernel.classify(state)
            break
        for player in players:
            if _is_controller(player):
                player.observe(state)
    return Trajectory(
        np.array(states), np.array(actions, dtype=np.int64).reshape(-1, 2),
        outcome=outcome, truncated=outcome is None,
        elapsed=np.array(elapsed),
        levels=np.array(levels, dtype=np.int64).reshape(-1, 2)
    )


def game_seed(seed, game, stream=()):
    """
    Seed of one game of a match: child ``game`` of the master ``seed``
    under the spawn key prefix ``stream``.
    """
    return np.random.SeedSequence(seed, spawn_key=(*stream, game))


@dataclass
class MatchStats:
    """
    Outcome counts of a batch of games.

    Truncated games count towards ``games`` only; percentages are taken
    over completed games.
    """
    games: int = 0
    pursuer_wins: int = 0
    wins_by_capture: int = 0
    wins_by_evader_crash: int = 0
    evader_wins: int = 0
    wins_by_evasion: int = 0
    wins_by_pursuer_crash: int = 0
    draws: int = 0
    truncated: int = 0
    mean_steps: float = 0.0
    trajectories: list = field(default=None, repr=False, compare=False)

    @classmethod
    def from_trajectories(cls, trajectories, keep=False):
        outcomes = [t.outcome for t in trajectories]

        def count(*classes):
            return sum(o in classes for o in outcomes)

        capture = count(TerminalClass.CAPTURE)
        evader_crash = count(TerminalClass.CRASH_EVADER)
        evasion = count(TerminalClass.EVASION)
        pursuer_crash = count(TerminalClass.CRASH_PURSUER)
        return cls(
            games=len(trajectories),
            pursuer_wins=capture + evader_crash,
            wins_by_capture=capture, wins_by_evader_crash=evader_crash,
            evader_wins=evasion + pursuer_crash,
            wins_by_evasion=evasion, wins_by_pursuer_crash=pursuer_crash,
            draws=count(TerminalClass.CRASH_BOTH),
            truncated=sum(t.truncated for t in trajectories),
            mean_steps=float(np.mean([t.steps for t in trajectories]))
            if trajectories else 0.0,
            trajectories=list(trajectories) if keep else None
        )

    @property
    def completed(self):
        return self.games - self.truncated

    def percent(self, name):
        """Percentage of completed games counted by field ``name``."""
        if self.completed == 0:
            return float('nan')
        return 100 * getattr(self, name) / self.completed

    @property
    def mean_reward(self):
        """Mean pursuer terminal reward over completed games."""
        if self.completed == 0:
            return float('nan')
        return (self.pursuer_wins - self.evader_wins) / self.completed

    def to_dict(self):
        result = {f.name: getattr(self, f.name) for f in fields(self)
                  if f.name != 'trajectories'}
        result['percent'] = {name: self.percent(name) for _, name in table_rows}
        return result

    def to_json(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def to_table(self, label='games'):
        return match_table({label: self})


def _cell(stats, name):
    return f"{stats.percent(name):.1f}% ({getattr(stats, name)})"


def match_table(columns, extra_rows=()):
    """
    Win table with one column per labelled `~brpeg.MatchStats`.

    Cells read ``percent% (count)``.

    Parameters
    ----------
    columns : dict
        Column label to `~brpeg.MatchStats`
    extra_rows : list of (str, list of str) (optional)
        Additional labelled rows appended below the counts

    Returns
    -------
    table : ~astropy.table.Table
    """
    table = Table()
    table['Outcome'] = [label for label, _ in table_rows] + \
        ['Truncated', 'Games'] + [label for label, _ in extra_rows]
    for i, (label, stats) in enumerate(columns.items()):
        table[str(label)] = [_cell(stats, name) for _, name in table_rows] + \
            [str(stats.truncated), str(stats.games)] + \
            [cells[i] for _, cells in extra_rows]
    return table


def run_match(kernel, pursuer, evader, s0, n_games, seed=0, max_steps=None,
              stream=(), progress=False, keep_trajectories=False):
    """
    Play ``n_games`` independent games from ``s0``.

    Game ``g`` is seeded with ``game_seed(seed, g, stream)`` so any game can
    be replayed in isolation with `~brpeg.rollout`.

    Returns
    -------
    stats : ~brpeg.MatchStats
    """
    if n_games < 1:
        raise ValueError(f"n_games must be at least 1, got {n_games}.")
    games = tqdm(range(n_games), disable=not progress, desc='games')
    trajectories = [
        rollout(kernel, pursuer, evader, s0, seed=game_seed(seed, g, stream),
                max_steps=max_steps)
        for g in games
    ]
    return MatchStats.from_trajectories(trajectories, keep=keep_trajectories)


class LevelMatrix(object):
    """
    Match statistics of one agent at a fixed level against a range of
    levels of the other agent.
    """
    def __init__(self, fixed_agent, fixed_level, levels, stats, exact=None):
        self.fixed_agent = fixed_agent
        self.fixed_level = fixed_level
        self.varying_agent = opponent(fixed_agent)
        self.levels = list(levels)
        self.stats = list(stats)
        self.exact = exact

    def _label(self, level):
        return f"k_{self.varying_agent}={level}"

    def to_table(self):
        """
        Aligned win table: Monte Carlo ``percent% (count)`` cells and,
        when available, exact percentages from absorption probabilities.
        """
        extra_rows = []
        if self.exact is not None:
            extra_rows = [
                (f'{name} (exact)', [f"{100 * e[name]:.1f}%" for e in self.exact])
                for name in ('Pursuer Wins', 'Evader Wins', 'Draws')
            ]
        table = match_table(
            {self._label(k): s for k, s in zip(self.levels, self.stats)},
            extra_rows=extra_rows
        )
        table.meta['fixed'] = f"{self.fixed_agent} level {self.fixed_level}"
        return table

    def write(self, path):
        self.to_table().write(path, format='ascii.fixed_width', overwrite=True)

    def to_dict(self):
        return dict(
            fixed_agent=self.fixed_agent, fixed_level=self.fixed_level,
            varying_agent=self.varying_agent, levels=self.levels,
            stats=[s.to_dict() for s in self.stats], exact=self.exact
        )

    def to_json(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def _exact_outcomes(kernel, pursuer, evader, s0, method='auto'):
    probs = absorption_probabilities(kernel, pursuer, evader, method=method).sel(
        state=kernel.index(s0)
    )
    p = {name: float(probs.sel(outcome=name)) for name in probs.outcome.values}
    return {
        'Pursuer Wins': p['CAPTURE'] + p['CRASH_EVADER'],
        'Evader Wins': p['EVASION'] + p['CRASH_PURSUER'],
        'Draws': p['CRASH_BOTH'],
    }


def level_matrix_experiment(hierarchy, kernel, s0, fixed_agent='evader',
                            fixed_level=2, levels=None, n_games=1500, seed=0,
                            max_steps=None, exact=False, exact_method='auto',
                            progress=False):
    """
    Fix one agent's level and vary the other's.

    Parameters
    ----------
    hierarchy : ~brpeg.Hierarchy
        Solved level-k ladder
    kernel : ~brpeg.TransitionKernel
        Discretized game
    s0 : ~brpeg.JointState or int
        Start state shared by all games
    fixed_agent : {'pursuer', 'evader'}
        Agent held at ``fixed_level``
    levels : iterable of int or None (optional)
        Levels of the other agent, by default 1 up to its k_max
    n_games : int
        Games per column
    seed : int
        Master seed; column ``k`` uses the spawn key prefix ``(k,)``
    exact : bool
        Add exact outcome probabilities at ``s0``
    exact_method : {'auto', 'direct', 'iterate'}
        Solver passed to `~brpeg.absorption_probabilities`; one solve per
        column covers all five outcomes

    Returns
    -------
    matrix : ~brpeg.LevelMatrix
    """
    if n_games < 1:
        raise ValueError(f"n_games must be at least 1, got {n_games}.")
    varying = opponent(fixed_agent)
    if levels is None:
        levels = range(1, hierarchy.k_max[varying] + 1)
    levels = list(levels)
    fixed = hierarchy.policy(fixed_agent, fixed_level)
    policies = [hierarchy.policy(varying, level) for level in levels]

    stats, outcomes = [], []
    for level, policy in zip(levels, policies):
        pair = {fixed_agent: fixed, varying: policy}
        stats.append(run_match(
            kernel, pair['pursuer'], pair['evader'], s0, n_games, seed=seed,
            max_steps=max_steps, stream=(level,), progress=progress
        ))
        if exact:
            outcomes.append(_exact_outcomes(kernel, pair['pursuer'],
                                            pair['evader'], s0, exact_method))
    return LevelMatrix(fixed_agent, fixed_level, levels, stats,
                       exact=outcomes if exact else None)
