from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd
import xarray as xr
from astropy import log
from scipy import sparse
from scipy.sparse.linalg import splu
from tqdm.auto import trange, tqdm

from .grid import TerminalClass

__all__ = [
    'Policy',
    'ValueFunction',
    'Hierarchy',
    'NashReport',
    'ConvergenceError',
    'level0_policy',
    'policy_evaluation',
    'best_response',
    'build_hierarchy',
    'nash_check',
    'absorption_probabilities',
    'opponent'
]

agents = ('pursuer', 'evader')

# Own actions whose Q-values lie this close to the maximum count as ties
tie_tolerance = 1e-12

hierarchy_format_version = 1

# Largest interior solved by sparse LU when method='auto'
direct_solve_limit = 20000

outcome_classes = [
    TerminalClass.CAPTURE, TerminalClass.CRASH_EVADER,
    TerminalClass.EVASION, TerminalClass.CRASH_PURSUER,
    TerminalClass.CRASH_BOTH
]


class ConvergenceError(RuntimeError):
    """
    Raised when value iteration fails to meet its tolerance.
    """
    def __init__(self, message, residual=np.inf, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def opponent(agent):
    """The other agent's name."""
    _check_agent(agent)
    return agents[1 - agents.index(agent)]


def _check_agent(agent):
    if agent not in agents:
        raise ValueError(f"Unknown agent {agent!r}, expected one of {agents}.")


def _sign(agent):
    return 1.0 if agent == 'pursuer' else -1.0


class Policy(object):
    """
    Action distribution of one agent at every joint state.

    Rows of terminal states are uniform and never used.
    """
    def __init__(self, agent, table, interior, kind=None, level=None):
        """
        Parameters
        ----------
        agent : {'pursuer', 'evader'}
            Owner of the policy
        table : ~numpy.ndarray
            (n_states, n_actions) action probabilities
        interior : ~numpy.ndarray
            Flat indices of the interior states
        kind : {'mixed', 'pure'} or None (optional)
            Detected from the table if omitted
        level : int or None (optional)
            Rationality level, if the policy belongs to a hierarchy
        """
        _check_agent(agent)
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2:
            raise ValueError("Policy table must be (n_states, n_actions).")
        rows = table[interior]
        if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1) > 1e-12):
            raise ValueError("Policy rows must be probability vectors.")
        one_hot = bool(np.all((rows == 0) | (rows == 1)))
        if kind is None:
            kind = 'pure' if one_hot else 'mixed'
        elif kind == 'pure' and not one_hot:
            raise ValueError("A pure policy must have one-hot rows.")
        elif kind not in ('pure', 'mixed'):
            raise ValueError(f"Unknown policy kind {kind!r}.")
        table.setflags(write=False)
        self.agent = agent
        self.table = table
        self.interior = interior
        self.kind = kind
        self.level = level

    @classmethod
    def from_actions(cls, agent, actions, n_actions, interior, n_states, level=None):
        """
        Pure policy choosing ``actions[i]`` at interior state ``interior[i]``.
        """
        table = np.full((n_states, n_actions), 1 / n_actions)
        table[interior] = 0
        table[interior, np.asarray(actions)] = 1
        return cls(agent, table, interior, kind='pure', level=level)

    @property
    def n_actions(self):
        return self.table.shape[1]

    @property
    def is_pure(self):
        return self.kind == 'pure'

    @property
    def actions(self):
        """Chosen action index per interior state (pure policies only)."""
        if not self.is_pure:
            raise ValueError("Only pure policies have a single action per state.")
        return np.argmax(self.table[self.interior], axis=1)

    def same_actions(self, other):
        """Exact state-by-state equality of two pure policies."""
        return (self.is_pure and other.is_pure and
                np.array_equal(self.actions, other.actions))

    def __repr__(self):
        level = '' if self.level is None else f" level {self.level}"
        return f"<Policy {self.agent}{level} ({self.kind}, {self.n_actions} actions)>"


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """
    Expected terminal reward from every joint state, in the owner's
    own sign convention (the evader's values are negated pursuer values).
    """
    agent: str
    values: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @property
    def pursuer_view(self):
        return _sign(self.agent) * self.values


@dataclass(frozen=True)
class NashReport:
    """Largest one-sided improvement available to either agent."""
    is_nash: bool
    max_gain: float
    pursuer_gain: float
    evader_gain: float

    def to_dict(self):
        return asdict(self)


def level0_policy(kernel, agent, variant='uniform'):
    """
    Level-0 policy of ``agent``.

    Parameters
    ----------
    kernel : ~brpeg.TransitionKernel
        Discretized game
    agent : {'pursuer', 'evader'}
        Owner of the policy
    variant : {'uniform', 'safe_uniform'}
        ``uniform`` spreads mass evenly over the action set.
        ``safe_uniform`` spreads it evenly over the actions whose most likely
        move of the agent does not land on a crash cell, falling back to the
        full action set where no action is safe.

    Returns
    -------
    policy : ~brpeg.Policy
    """
    _check_agent(agent)
    n_actions = kernel.n_actions[agents.index(agent)]
    table = np.full((kernel.n_states, n_actions), 1 / n_actions)
    if variant == 'safe_uniform':
        safe = _safe_actions(kernel, agent)
        counts = safe.sum(axis=1)
        rows = kernel.interior[counts > 0]
        table[rows] = safe[counts > 0] / counts[counts > 0, None]
    elif variant != 'uniform':
        raise ValueError(f"Unknown level-0 variant {variant!r}.")
    return Policy(agent, table, kernel.interior, kind='mixed', level=0)


def _safe_actions(kernel, agent):
    grid = kernel.grid
    px, py, ex, ey = np.unravel_index(kernel.interior, grid.state_shape)
    if agent == 'pursuer':
        moves = kernel.probs[:, :, 0, 1:5]
        x, y = px, py
    else:
        moves = kernel.probs[:, 0, :, 5:9]
        x, y = ex, ey
    # Own-move stencil order: +x, -x, +y, -y
    step_x = np.array([1, -1, 0, 0])[np.argmax(moves, axis=-1)]
    step_y = np.array([0, 0, 1, -1])[np.argmax(moves, axis=-1)]
    return ~grid.crash_mask[x[:, None] + step_x, y[:, None] + step_y]


def _iterate(kernel, stencil, boundary, tol, max_iterations, progress, desc):
    values = np.array(boundary, dtype=np.float64)
    rows, succ = kernel.interior, kernel.successors
    if len(rows) == 0:
        return values, 0, 0.0
    subscripts = 'mk,mk->m' if values.ndim == 1 else 'mk,mkc->mc'
    iterator = trange(max_iterations, disable=not progress, desc=desc)
    residual = np.inf
    for iteration in iterator:
        update = np.einsum(subscripts, stencil, values[succ])
        residual = float(np.abs(update - values[rows]).max())
        values[rows] = update
        if progress:
            iterator.set_description(f"{desc} residual={residual:.1e}")
        if residual < tol:
            return values, iteration + 1, residual
    raise ConvergenceError(
        f"{desc} did not converge: residual {residual:.3g} after "
        f"{max_iterations} iterations.", residual, max_iterations
    )


def _solve_direct(kernel, stencil, boundary):
    values = np.array(boundary, dtype=np.float64)
    m = kernel.n_interior
    if m == 0:
        return values
    local = kernel.interior_lookup[kernel.successors]
    inside = local >= 0
    rows = np.repeat(np.arange(m), stencil.shape[1]).reshape(local.shape)
    transient = sparse.csr_matrix(
        (stencil[inside], (rows[inside], local[inside])), shape=(m, m)
    )
    system = (sparse.identity(m, format='csc') - transient).tocsc()
    exits = np.where(inside, 0, stencil)
    if values.ndim == 1:
        rhs = np.einsum('mk,mk->m', exits, values[kernel.successors])
    else:
        rhs = np.einsum('mk,mkc->mc', exits, values[kernel.successors])
    try:
        solution = splu(system).solve(rhs)
    except RuntimeError as err:
        raise ConvergenceError(
            f"Absorbing system is singular ({err}): some interior states "
            "never reach a terminal state."
        )
    values[kernel.interior] = solution
    return values


def _default_iterations(kernel, max_iterations):
    return 10 * kernel.n_states if max_iterations is None else int(max_iterations)


def _policy_tables(my_policy, opp_policy):
    if my_policy.agent == opp_policy.agent:
        raise ValueError("Policies must belong to different agents.")
    if my_policy.agent == 'pursuer':
        return my_policy.table, opp_policy.table
    return opp_policy.table, my_policy.table


def policy_evaluation(kernel, my_policy, opp_policy, tol=1e-9,
                      max_iterations=None, method='iterate', progress=False):
    """
    Expected terminal reward of a fixed policy pair.

    Parameters
    ----------
    kernel : ~brpeg.TransitionKernel
        Discretized game
    my_policy : ~brpeg.Policy
        Policy of the agent whose values are returned
    opp_policy : ~brpeg.Policy
        Policy of the other agent
    tol : float
        Sup-norm change at which iteration stops
    max_iterations : int or None (optional)
        Defaults to ten times the number of joint states
    method : {'iterate', 'direct'}
        Jacobi iteration from the terminal rewards, or a sparse LU solve of
        the absorbing linear system
    progress : bool
        Show a progress bar

    Returns
    -------
    values : ~brpeg.ValueFunction
        In the sign convention of ``my_policy.agent``
    """
    agent = my_policy.agent
    stencil = kernel.joint(*_policy_tables(my_policy, opp_policy))
    boundary = _sign(agent) * kernel.rewards
    if method == 'direct':
        return ValueFunction(agent, _solve_direct(kernel, stencil, boundary))
    if method != 'iterate':
        raise ValueError(f"Unknown evaluation method {method!r}.")
    values, iterations, residual = _iterate(
        kernel, stencil, boundary, tol, _default_iterations(kernel, max_iterations),
        progress, f"evaluate {agent}"
    )
    return ValueFunction(agent, values, iterations, residual)


def absorption_probabilities(kernel, pursuer_policy, evader_policy,
                             method='auto', tol=1e-12, max_iterations=None):
    """
    Probability of ending in each terminal class from every joint state.

    Parameters
    ----------
    method : {'auto', 'direct', 'iterate'}
        Sparse LU solve, Jacobi iteration to ``tol``, or LU only while the
        interior has at most ``direct_solve_limit`` states

    Returns
    -------
    probabilities : ~xarray.DataArray
        Dimensions (outcome, state); outcomes are terminal class names
    """
    if method == 'auto':
        method = 'direct' if kernel.n_interior <= direct_solve_limit else 'iterate'
    stencil = kernel.joint(pursuer_policy.table, evader_policy.table)
    boundary = np.stack(
        [kernel.classes == cls for cls in outcome_classes], axis=1
    ).astype(np.float64)
    if method == 'direct':
        values = _solve_direct(kernel, stencil, boundary)
    elif method == 'iterate':
        values = _iterate(
            kernel, stencil, boundary, tol,
            _default_iterations(kernel, max_iterations), False, 'absorb'
        )[0]
    else:
        raise ValueError(f"Unknown method {method!r}.")
    return xr.DataArray(
        values.T, dims=('outcome', 'state'),
        coords=dict(outcome=[cls.name for cls in outcome_classes],
                    state=np.arange(kernel.n_states))
    )


def best_response(kernel, opp_policy, agent=None, tol=1e-9,
                  max_iterations=None, progress=False):
    """
    Pure best response to a fixed opponent policy.

    Runs undiscounted value iteration with Jacobi sweeps from the terminal
    rewards (zero on interior states), maximizing the agent's own expected
    terminal reward. Ties between actions go to the lowest action index.

    Parameters
    ----------
    kernel : ~brpeg.TransitionKernel
        Discretized game
    opp_policy : ~brpeg.Policy
        Fixed policy of the opponent
    agent : {'pursuer', 'evader'} or None (optional)
        Responding agent; defaults to the opponent of ``opp_policy``
    tol : float
        Sup-norm change at which iteration stops
    max_iterations : int or None (optional)
        Defaults to ten times the number of joint states
    progress : bool
        Show a progress bar

    Returns
    -------
    policy : ~brpeg.Policy
        Greedy pure policy
    values : ~brpeg.ValueFunction
        Converged values in the responding agent's convention

    Raises
    ------
    ConvergenceError
        If the sup-norm change stays above ``tol``.
    """
    if agent is None:
        agent = opponent(opp_policy.agent)
    elif agent == opp_policy.agent:
        raise ValueError("An agent cannot respond to its own policy.")
    _check_agent(agent)
    max_iterations = _default_iterations(kernel, max_iterations)
    mixed = kernel.mixed(agent, opp_policy.table)
    rows, succ = kernel.interior, kernel.successors
    values = _sign(agent) * np.array(kernel.rewards)
    iterations, residual = 0, 0.0

    if len(rows) > 0:
        iterator = trange(max_iterations, disable=not progress)
        residual = np.inf
        for iteration in iterator:
            q = np.einsum('mak,mk->ma', mixed, values[succ])
            update = q.max(axis=1)
            residual = float(np.abs(update - values[rows]).max())
            values[rows] = update
            if progress:
                iterator.set_description(f"{agent} residual={residual:.1e}")
            if residual < tol:
                iterations = iteration + 1
                break
        else:
            raise ConvergenceError(
                f"Best response of the {agent} did not converge: residual "
                f"{residual:.3g} after {max_iterations} iterations.",
                residual, max_iterations
            )
    q = np.einsum('mak,mk->ma', mixed, values[succ])
    ties = q >= q.max(axis=1, keepdims=True) - tie_tolerance
    actions = np.argmax(ties, axis=1)
    policy = Policy.from_actions(
        agent, actions, mixed.shape[1], rows, kernel.n_states
    )
    return policy, ValueFunction(agent, values, iterations, residual)


def nash_check(kernel, pursuer_policy, evader_policy, tol=1e-6, solver_tol=1e-10,
               max_iterations=None):
    """
    Check whether neither agent gains by deviating unilaterally.

    Parameters
    ----------
    kernel : ~brpeg.TransitionKernel
        Discretized game
    pursuer_policy, evader_policy : ~brpeg.Policy
        Candidate equilibrium pair
    tol : float
        Largest deviation gain still accepted as an equilibrium
    solver_tol : float
        Tolerance of the inner evaluations and best responses

    Returns
    -------
    report : ~brpeg.NashReport
    """
    pair = policy_evaluation(kernel, pursuer_policy, evader_policy,
                             tol=solver_tol, max_iterations=max_iterations)
    gains = {}
    for agent, fixed in (('pursuer', evader_policy), ('evader', pursuer_policy)):
        _, deviation = best_response(kernel, fixed, agent, tol=solver_tol,
                                     max_iterations=max_iterations)
        own = _sign(agent) * pair.pursuer_view
        gains[agent] = max(float(np.max(deviation.values - own)), 0.0)
    max_gain = max(gains.values())
    return NashReport(
        is_nash=max_gain <= tol, max_gain=max_gain,
        pursuer_gain=gains['pursuer'], evader_gain=gains['evader']
    )


class Hierarchy(object):
    """
    Level-k ladder of policies and value functions for both agents.

    Level 0 of each agent is its level-0 policy. Level k >= 1 is the best
    response to the opponent's level k - 1.
    """
    def __init__(self, policies, values, k_max, level0_variant='uniform',
                 fixed_point=None, nash=None, kernel_hash=None):
        self.policies = policies
        self.values = values
        self.k_max = k_max
        self.level0_variant = level0_variant
        self.fixed_point = fixed_point
        self.nash = nash
        self.kernel_hash = kernel_hash

    @property
    def fixed_point_level(self):
        return None if self.fixed_point is None else self.fixed_point[0]

    def depth(self, agent):
        """Highest level computed for ``agent``."""
        return len(self.policies[agent]) - 1

    def policy(self, agent, level):
        _check_agent(agent)
        if not 0 <= level <= self.depth(agent):
            raise ValueError(
                f"Level {level} of the {agent} is not in the hierarchy "
                f"(levels 0..{self.depth(agent)})."
            )
        return self.policies[agent][level]

    def value(self, agent, level):
        if level == 0:
            raise ValueError("Level-0 policies have no value function.")
        self.policy(agent, level)
        return self.values[agent][level]

    def summary(self):
        return dict(
            k_max=dict(self.k_max),
            depth={agent: self.depth(agent) for agent in agents},
            level0_variant=self.level0_variant,
            fixed_point_level=self.fixed_point_level,
            fixed_point_agent=None if self.fixed_point is None else self.fixed_point[1],
            nash=None if self.nash is None else self.nash.to_dict(),
            iterations={agent: [v.iterations for v in self.values[agent][1:]]
                        for agent in agents},
        )

    def save(self, path):
        """Write the hierarchy as a netCDF file."""
        data_vars = {}
        interior = self.policies['pursuer'][0].interior
        data_vars['interior_state'] = (['interior'], interior.astype(np.int32))
        for agent in agents:
            tables = np.stack([p.table for p in self.policies[agent]])
            values = np.stack(
                [np.full(tables.shape[1], np.nan)] +
                [v.values for v in self.values[agent][1:]]
            )
            data_vars[f'{agent}_policy'] = (
                [f'{agent}_level', 'state', f'{agent}_action'], tables
            )
            data_vars[f'{agent}_value'] = ([f'{agent}_level', 'state'], values)
            data_vars[f'{agent}_iterations'] = (
                [f'{agent}_level'],
                np.array([0] + [v.iterations for v in self.values[agent][1:]],
                         dtype=np.int32)
            )
            data_vars[f'{agent}_residual'] = (
                [f'{agent}_level'],
                np.array([0.0] + [v.residual for v in self.values[agent][1:]])
            )
        attrs = dict(
            format_version=hierarchy_format_version,
            kernel_hash=self.kernel_hash or '',
            level0_variant=self.level0_variant,
            k_max_pursuer=self.k_max['pursuer'],
            k_max_evader=self.k_max['evader'],
            fixed_point_level=-1 if self.fixed_point is None else self.fixed_point[0],
            fixed_point_agent='' if self.fixed_point is None else self.fixed_point[1],
        )
        if self.nash is not None:
            attrs.update(
                nash_is_nash=int(self.nash.is_nash),
                nash_pursuer_gain=self.nash.pursuer_gain,
                nash_evader_gain=self.nash.evader_gain,
            )
        xr.Dataset(data_vars, attrs=attrs).to_netcdf(path, engine='scipy')

    @classmethod
    def load(cls, path, kernel=None):
        """
        Read a hierarchy written by `~brpeg.Hierarchy.save`.

        If ``kernel`` is given, its content hash must match the stored one.
        """
        ds = xr.load_dataset(path, engine='scipy')
        if int(ds.attrs.get('format_version', -1)) != hierarchy_format_version:
            raise ValueError(f"{path} is not a version "
                             f"{hierarchy_format_version} hierarchy file.")
        if kernel is not None and ds.attrs['kernel_hash'] != kernel.content_hash:
            raise ValueError(f"{path} was solved for a different kernel.")
        interior = ds['interior_state'].values.astype(np.int64)
        policies, values = {}, {}
        for agent in agents:
            tables = ds[f'{agent}_policy'].values
            policies[agent] = [
                Policy(agent, table, interior, level=level)
                for level, table in enumerate(tables)
            ]
            values[agent] = [None] + [
                ValueFunction(agent, np.array(v),
                              int(ds[f'{agent}_iterations'].values[level]),
                              float(ds[f'{agent}_residual'].values[level]))
                for level, v in enumerate(ds[f'{agent}_value'].values)
                if level > 0
            ]
        fixed_point = None
        if int(ds.attrs['fixed_point_level']) >= 0:
            fixed_point = (int(ds.attrs['fixed_point_level']),
                           str(ds.attrs['fixed_point_agent']))
        nash = None
        if 'nash_is_nash' in ds.attrs:
            gains = (float(ds.attrs['nash_pursuer_gain']),
                     float(ds.attrs['nash_evader_gain']))
            nash = NashReport(bool(ds.attrs['nash_is_nash']), max(gains), *gains)
        return cls(
            policies, values,
            k_max=dict(pursuer=int(ds.attrs['k_max_pursuer']),
                       evader=int(ds.attrs['k_max_evader'])),
            level0_variant=str(ds.attrs['level0_variant']),
            fixed_point=fixed_point, nash=nash,
            kernel_hash=str(ds.attrs['kernel_hash']) or None
        )

    def to_csv(self, directory):
        """
        Write one CSV per agent and level: state index, cells, action
        probabilities and value.

        Returns
        -------
        paths : list of ~pathlib.Path
        """
        from pathlib import Path
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for agent in agents:
            for level, policy in enumerate(self.policies[agent]):
                rows = policy.interior
                frame = pd.DataFrame(dict(state=rows))
                for a in range(policy.n_actions):
                    frame[f'p_{a}'] = policy.table[rows, a]
                if level > 0:
                    frame['value'] = self.values[agent][level].values[rows]
                path = directory / f'policy-{agent}-k{level}.csv'
                frame.to_csv(path, index=False, float_format='%.17g')
                paths.append(path)
        return paths

    def __repr__(self):
        fixed = '' if self.fixed_point is None else \
            f", fixed point K={self.fixed_point[0]} ({self.fixed_point[1]})"
        return (f"<Hierarchy pursuer 0..{self.depth('pursuer')}, "
                f"evader 0..{self.depth('evader')}{fixed}>")


def build_hierarchy(kernel, k_max_pursuer, k_max_evader, level0_variant='uniform',
                    tol=1e-9, max_iterations=None, progress=False, check_nash=True):
    """
    Build the level-k ladder of both agents.

    The pursuer is solved up to level max(k_max_pursuer, k_max_evader - 1)
    and the evader up to max(k_max_evader, k_max_pursuer - 1), so that each
    agent's own ladder and every opponent model it may infer are available.
    The first level K with mu^(K+2) = mu^(K) for either agent is recorded as
    the fixed point, and the pair (mu^(K), opponent mu^(K+1)) is checked for
    a Nash equilibrium.

    Parameters
    ----------
    kernel : ~brpeg.TransitionKernel
        Discretized game
    k_max_pursuer, k_max_evader : int
        Maximum rationality levels, at least 1
    level0_variant : {'uniform', 'safe_uniform'}
        Level-0 policy of both agents
    tol : float
        Value-iteration tolerance
    max_iterations : int or None (optional)
        Value-iteration cap per level
    progress : bool
        Show progress bars
    check_nash : bool
        Run `~brpeg.nash_check` on a detected fixed point

    Returns
    -------
    hierarchy : ~brpeg.Hierarchy
    """
    if k_max_pursuer < 1 or k_max_evader < 1:
        raise ValueError("k_max must be at least 1 for both agents.")
    k_max = dict(pursuer=int(k_max_pursuer), evader=int(k_max_evader))
    depth = dict(pursuer=max(k_max['pursuer'], k_max['evader'] - 1),
                 evader=max(k_max['evader'], k_max['pursuer'] - 1))
    policies = {agent: [level0_policy(kernel, agent, level0_variant)]
                for agent in agents}
    values = {agent: [None] for agent in agents}
    fixed_point = None

    levels = tqdm(range(1, max(depth.values()) + 1), disable=not progress)
    for level in levels:
        for agent in agents:
            if level > depth[agent]:
                continue
            if progress:
                levels.set_description(f"level {level} {agent}")
            policy, value = best_response(
                kernel, policies[opponent(agent)][level - 1], agent,
                tol=tol, max_iterations=max_iterations
            )
            policy.level = level
            policies[agent].append(policy)
            values[agent].append(value)
            log.debug(f"Level {level} {agent}: {value.iterations} iterations, "
                      f"residual {value.residual:.2e}")
            if (fixed_point is None and level >= 3 and
                    policy.same_actions(policies[agent][level - 2])):
                fixed_point = (level - 2, agent)
                log.info(f"Level-k ladder reached a fixed point at K={level - 2} "
                         f"({agent}).")

    nash = None
    if fixed_point is not None and check_nash:
        K, agent = fixed_point
        pair = {agent: policies[agent][K],
                opponent(agent): policies[opponent(agent)][K + 1]}
        nash = nash_check(kernel, pair['pursuer'], pair['evader'],
                          max_iterations=max_iterations)
        if not nash.is_nash:
            log.warning(f"Fixed point at K={K} failed the Nash check "
                        f"(gain {nash.max_gain:.3g}).")
    return Hierarchy(policies, values, k_max, level0_variant, fixed_point, nash,
                     kernel_hash=kernel.content_hash)
