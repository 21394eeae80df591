import json
import hashlib
from dataclasses import dataclass

import numpy as np
import xarray as xr
import astropy.units as u
from astropy import log
from scipy import sparse

from .grid import (
    GridSpec, WindField, AgentSpec, JointState, TerminalClass,
    classify_all, classify_state, joint_index, joint_state, reward_table,
    length_unit, speed_unit, noise_unit
)

__all__ = [
    'JointAction',
    'TransitionKernel',
    'DegenerateModelError',
    'drift',
    'q_factor',
    'holding_time',
    'transition_probs',
    'build_kernel',
    'kernel_moments',
    'local_consistency_error',
    'kernel_hash'
]

# Version of the kernel cache layout written by TransitionKernel.save
cache_format_version = 1

# Stencil order: stay, then +e_j / -e_j for j = 1..4 over (px, py, ex, ey)
stencil_offsets = np.array([
    [0, 0, 0, 0],
    [1, 0, 0, 0], [-1, 0, 0, 0],
    [0, 1, 0, 0], [0, -1, 0, 0],
    [0, 0, 1, 0], [0, 0, -1, 0],
    [0, 0, 0, 1], [0, 0, 0, -1],
])
stencil_size = len(stencil_offsets)

# Probabilities this far below zero are rounding noise on the stay term
negative_tolerance = 1e-12


class DegenerateModelError(ValueError):
    """Raised when Q_h(s) vanishes: no speed, no wind and no noise."""


@dataclass(frozen=True)
class JointAction:
    """Heading indices chosen by the pursuer and the evader."""
    pursuer_heading_index: int
    evader_heading_index: int

    def check(self, agents):
        pursuer, evader = agents
        if not (0 <= self.pursuer_heading_index < pursuer.n_actions and
                0 <= self.evader_heading_index < evader.n_actions):
            raise ValueError(f"{self} is not a valid joint action.")


def _require_interior(grid, s):
    cls = classify_state(grid, s)
    if cls is not TerminalClass.INTERIOR:
        raise ValueError(f"{s} is terminal ({cls.name}), not interior.")


def _drift_values(wind, agents, s, a):
    pursuer, evader = agents
    a.check(agents)
    theta_p = pursuer.theta[a.pursuer_heading_index]
    theta_e = evader.theta[a.evader_heading_index]
    px, py = s.pursuer_cell
    ex, ey = s.evader_cell
    return np.array([
        pursuer.v * np.cos(theta_p) + wind.wx[px, py],
        pursuer.v * np.sin(theta_p) + wind.wy[px, py],
        evader.v * np.cos(theta_e) + wind.wx[ex, ey],
        evader.v * np.sin(theta_e) + wind.wy[ex, ey],
    ])


def drift(grid, wind, agents, s, a):
    """
    Stacked drift b(s, theta) of both agents.

    The wind is sampled at each agent's own cell.

    Parameters
    ----------
    grid : ~brpeg.GridSpec
        Arena
    wind : ~brpeg.WindField
        Mean wind and noise intensity
    agents : tuple of ~brpeg.AgentSpec
        (pursuer, evader)
    s : ~brpeg.JointState
        Interior joint state
    a : ~brpeg.JointAction
        Joint action

    Returns
    -------
    b : ~astropy.units.Quantity
        [b_1, b_2, b_3, b_4] in m/s
    """
    _require_interior(grid, s)
    return _drift_values(wind, agents, s, a) * speed_unit


def _q_value(grid, wind, agents, s):
    pursuer, evader = agents
    largest = max(
        np.abs(_drift_values(wind, agents, s, JointAction(i, j))).sum()
        for i in range(pursuer.n_actions) for j in range(evader.n_actions)
    )
    q = grid.h * largest + 4 * wind.sigma ** 2
    if q <= 0:
        raise DegenerateModelError(
            f"Q_h vanishes at {s}: all speeds, wind and noise are zero."
        )
    return q


def q_factor(grid, wind, agents, s):
    """
    Normalizer Q_h(s) = h max_theta sum_j |b_j(s, theta)| + 4 sigma_w^2.

    Returns
    -------
    q : ~astropy.units.Quantity
        In m^2 / s

    Raises
    ------
    DegenerateModelError
        If Q_h(s) is zero.
    """
    _require_interior(grid, s)
    return _q_value(grid, wind, agents, s) * length_unit ** 2 / u.s


def holding_time(grid, wind, agents, s):
    """
    Interpolation interval Delta t_h(s) = h^2 / Q_h(s).

    Returns
    -------
    dt : ~astropy.units.Quantity
        Holding time in seconds
    """
    _require_interior(grid, s)
    return grid.h ** 2 / _q_value(grid, wind, agents, s) * u.s


def transition_probs(grid, wind, agents, s, a):
    """
    Locally consistent transition probabilities from ``s`` under ``a``.

    P(s +/- h e_j) = (sigma_w^2 / 2 + h b_j^{+/-}) / Q_h(s) and the stay
    probability is the complement. Successors on terminal states are kept.

    Returns
    -------
    probs : dict
        Mapping from `~brpeg.JointState` to probability, nine entries with
        the stay term first
    """
    _require_interior(grid, s)
    q = _q_value(grid, wind, agents, s)
    b = _drift_values(wind, agents, s, a)
    half_var = wind.sigma ** 2 / 2
    moves = []
    for j in range(4):
        moves.append((half_var + grid.h * max(b[j], 0.0)) / q)
        moves.append((half_var + grid.h * max(-b[j], 0.0)) / q)
    stay = 1.0 - sum(moves)
    if stay < -negative_tolerance:
        raise AssertionError(f"Negative stay probability {stay} at {s}.")
    origin = np.array(tuple(s))
    probs = {}
    for offset, p in zip(stencil_offsets, [max(stay, 0.0)] + moves):
        px, py, ex, ey = origin + offset
        probs[JointState((px, py), (ex, ey))] = p
    return probs


def kernel_moments(grid, wind, agents, s, a):
    """
    Exact per-unit-time mean and covariance of one step of the chain.

    Returns
    -------
    mean_rate : ~astropy.units.Quantity
        E[Delta s] / Delta t_h(s), in m/s
    cov_rate : ~astropy.units.Quantity
        Cov[Delta s] / Delta t_h(s), 4x4 in m^2/s
    """
    probs = transition_probs(grid, wind, agents, s, a)
    dt = holding_time(grid, wind, agents, s).to_value(u.s)
    p = np.array(list(probs.values()))
    steps = stencil_offsets * grid.h
    mean = p @ steps
    second = (steps * p[:, None]).T @ steps
    cov = second - np.outer(mean, mean)
    return mean / dt * speed_unit, cov / dt * length_unit ** 2 / u.s


def local_consistency_error(grid, wind, agents, s, a):
    """
    Deviation of the chain's moments from the diffusion they approximate.

    Returns
    -------
    mean_error : float
        max |E[Delta s] / Delta t - b| in m/s
    cov_error : float
        max |Cov[Delta s] / Delta t - sigma_w^2 I| in m^2/s
    """
    mean_rate, cov_rate = kernel_moments(grid, wind, agents, s, a)
    b = drift(grid, wind, agents, s, a)
    mean_error = np.max(np.abs((mean_rate - b).to_value(speed_unit)))
    target = wind.sigma ** 2 * np.eye(4)
    cov_error = np.max(np.abs(cov_rate.to_value(length_unit ** 2 / u.s) - target))
    return float(mean_error), float(cov_error)


def kernel_hash(grid, wind, agents):
    """
    Content hash of everything the transition kernel depends on.
    """
    from . import __version__
    pursuer, evader = agents
    digest = hashlib.sha256()
    description = dict(
        format=cache_format_version, version=__version__,
        grid=grid.to_dict(), sigma_w=repr(wind.sigma),
        pursuer=pursuer.to_dict(), evader=evader.to_dict()
    )
    digest.update(json.dumps(description, sort_keys=True).encode())
    digest.update(np.ascontiguousarray(wind.wx, dtype='<f8').tobytes())
    digest.update(np.ascontiguousarray(wind.wy, dtype='<f8').tobytes())
    return digest.hexdigest()


class TransitionKernel(object):
    """
    Sparse transition kernel of the discretized game.

    Only interior states carry outgoing transitions; terminal states are
    absorbing. Every interior state has the same nine-point stencil of
    successors for every joint action, so the kernel is stored as

    * ``successors``: (n_interior, 9) flat successor indices
    * ``probs``: (n_interior, n_pursuer_actions, n_evader_actions, 9)

    with the stencil order stay, +e_1, -e_1, ..., +e_4, -e_4.
    """
    def __init__(self, grid, wind, agents, classes, interior, successors,
                 probs, holding_times):
        self.grid = grid
        self.wind = wind
        self.pursuer, self.evader = agents
        self.classes = classes
        self.interior = interior
        self.successors = successors
        self.probs = probs
        self.holding_times = holding_times
        self.rewards = reward_table[classes]
        lookup = np.full(grid.n_states, -1, dtype=np.int64)
        lookup[interior] = np.arange(len(interior))
        self.interior_lookup = lookup
        for array in (classes, interior, successors, probs, holding_times,
                      self.rewards, lookup):
            array.setflags(write=False)
        self._hash = None

    @property
    def agents(self):
        return (self.pursuer, self.evader)

    @property
    def n_states(self):
        return self.grid.n_states

    @property
    def n_interior(self):
        return len(self.interior)

    @property
    def n_actions(self):
        return (self.pursuer.n_actions, self.evader.n_actions)

    @property
    def interior_mask(self):
        return self.interior_lookup >= 0

    @property
    def content_hash(self):
        if self._hash is None:
            self._hash = kernel_hash(self.grid, self.wind, self.agents)
        return self._hash

    def index(self, s):
        """Flat index of a `~brpeg.JointState` (integers pass through)."""
        if isinstance(s, JointState):
            return joint_index(self.grid, s)
        s = int(s)
        if not 0 <= s < self.n_states:
            raise ValueError(f"State index {s} outside [0, {self.n_states}).")
        return s

    def state(self, index):
        return joint_state(self.grid, index)

    def classify(self, s):
        return TerminalClass(int(self.classes[self.index(s)]))

    def is_terminal(self, s):
        return self.classes[self.index(s)] != TerminalClass.INTERIOR

    def row(self, s, pursuer_action, evader_action):
        """
        Successor indices and probabilities of ``s`` under a joint action.
        """
        r = self.interior_lookup[self.index(s)]
        if r < 0:
            raise ValueError(f"State {s} is terminal and has no transitions.")
        return self.successors[r], self.probs[r, pursuer_action, evader_action]

    def distribution(self, s, a):
        """Successor distribution as a dict of `~brpeg.JointState`."""
        a.check(self.agents)
        successors, probs = self.row(s, a.pursuer_heading_index,
                                     a.evader_heading_index)
        return {self.state(n): float(p) for n, p in zip(successors, probs)}

    def sample(self, s, pursuer_action, evader_action, rng, size=None):
        """Draw successor indices of ``s`` under a joint action."""
        successors, probs = self.row(s, pursuer_action, evader_action)
        return rng.choice(successors, p=probs / probs.sum(), size=size)

    def to_sparse(self, pursuer_action, evader_action):
        """
        Transition matrix of one joint action.

        Returns
        -------
        P : ~scipy.sparse.csr_matrix
            (n_states, n_states); rows of terminal states are empty
        """
        rows = np.repeat(self.interior, stencil_size)
        data = self.probs[:, pursuer_action, evader_action, :].ravel()
        return sparse.csr_matrix(
            (data, (rows, self.successors.ravel())),
            shape=(self.n_states, self.n_states)
        )

    def mixed(self, agent, opponent_table):
        """
        Marginalize the opponent's policy out of the stencil.

        Parameters
        ----------
        agent : {'pursuer', 'evader'}
            The agent whose own actions are kept
        opponent_table : ~numpy.ndarray
            (n_states, n_opponent_actions) action probabilities

        Returns
        -------
        probs : ~numpy.ndarray
            (n_interior, n_own_actions, 9)
        """
        opp = opponent_table[self.interior]
        if agent == 'pursuer':
            return np.einsum('mj,mijk->mik', opp, self.probs)
        if agent == 'evader':
            return np.einsum('mi,mijk->mjk', opp, self.probs)
        raise ValueError(f"Unknown agent {agent!r}.")

    def joint(self, pursuer_table, evader_table):
        """Stencil probabilities (n_interior, 9) under two policies."""
        return np.einsum(
            'mi,mj,mijk->mk', pursuer_table[self.interior],
            evader_table[self.interior], self.probs
        )

    def save(self, path):
        """
        Write the kernel cache as a netCDF file (format version 1).
        """
        from . import __version__
        grid, wind = self.grid, self.wind
        ds = xr.Dataset(
            data_vars=dict(
                classes=(['state'], self.classes.astype(np.int8)),
                interior_state=(['interior'], self.interior.astype(np.int32)),
                successors=(['interior', 'stencil'],
                            self.successors.astype(np.int32)),
                probs=(['interior', 'pursuer_action', 'evader_action', 'stencil'],
                       self.probs),
                holding_time=(['interior'], self.holding_times),
                obstacle=(['x', 'y'], _cell_mask(grid, grid.obstacles)),
                evasion=(['x', 'y'], _cell_mask(grid, grid.evasion)),
                wind_x=(['x', 'y'], wind.wx),
                wind_y=(['x', 'y'], wind.wy),
                pursuer_headings=(['pursuer_action'], self.pursuer.theta),
                evader_headings=(['evader_action'], self.evader.theta),
            ),
            attrs=dict(
                format_version=cache_format_version,
                content_hash=self.content_hash,
                brpeg_version=str(__version__),
                cell_size=grid.h, capture_radius=grid.rho,
                sigma_w=wind.sigma,
                pursuer_speed=self.pursuer.v, evader_speed=self.evader.v,
            )
        )
        ds.to_netcdf(path, engine='scipy')

    @classmethod
    def load(cls, path, expected_hash=None):
        """
        Read a kernel cache written by `~brpeg.TransitionKernel.save`.

        Parameters
        ----------
        path : str or ~pathlib.Path
            Cache file
        expected_hash : str or None (optional)
            If given, the stored content hash must match
        """
        ds = xr.load_dataset(path, engine='scipy')
        if int(ds.attrs.get('format_version', -1)) != cache_format_version:
            raise ValueError(
                f"{path} has cache format {ds.attrs.get('format_version')}, "
                f"expected {cache_format_version}."
            )
        if expected_hash is not None and ds.attrs['content_hash'] != expected_hash:
            raise ValueError(f"{path} does not match the requested kernel.")
        width, height = ds.sizes['x'], ds.sizes['y']
        obstacle = np.argwhere(ds.obstacle.values.astype(bool))
        evasion = np.argwhere(ds.evasion.values.astype(bool))
        grid = GridSpec(
            width, height, cell_size=ds.attrs['cell_size'] * length_unit,
            obstacles=[tuple(c) for c in obstacle],
            evasion=[tuple(c) for c in evasion],
            capture_radius=ds.attrs['capture_radius'] * length_unit
        )
        wind = WindField(ds.wind_x.values * speed_unit,
                         ds.wind_y.values * speed_unit,
                         sigma_w=ds.attrs['sigma_w'] * noise_unit)
        agents = (
            AgentSpec(ds.attrs['pursuer_speed'] * speed_unit,
                      ds.pursuer_headings.values * u.rad),
            AgentSpec(ds.attrs['evader_speed'] * speed_unit,
                      ds.evader_headings.values * u.rad),
        )
        kernel = cls(
            grid, wind, agents,
            classes=ds.classes.values.astype(np.int8),
            interior=ds.interior_state.values.astype(np.int64),
            successors=ds.successors.values.astype(np.int64),
            probs=np.array(ds.probs.values, dtype=np.float64),
            holding_times=np.array(ds.holding_time.values, dtype=np.float64),
        )
        kernel._hash = ds.attrs['content_hash']
        return kernel

    def __repr__(self):
        return (
            f"<TransitionKernel {self.n_states} states "
            f"({self.n_interior} interior), "
            f"{self.n_actions[0]}x{self.n_actions[1]} joint actions>"
        )


def _cell_mask(grid, cells):
    mask = np.zeros(grid.shape, dtype=np.int8)
    for x, y in cells:
        mask[x, y] = 1
    return mask


def build_kernel(grid, wind, agents):
    """
    Build the transition kernel over all interior states and joint actions.

    Parameters
    ----------
    grid : ~brpeg.GridSpec
        Arena
    wind : ~brpeg.WindField
        Mean wind and noise intensity
    agents : tuple of ~brpeg.AgentSpec
        (pursuer, evader)

    Returns
    -------
    kernel : ~brpeg.TransitionKernel

    Raises
    ------
    DegenerateModelError
        If Q_h(s) vanishes at some interior state.
    """
    wind.check_grid(grid)
    pursuer, evader = agents
    classes = classify_all(grid)
    interior = np.flatnonzero(classes == TerminalClass.INTERIOR)
    px, py, ex, ey = np.unravel_index(interior, grid.state_shape)
    h, sigma2 = grid.h, wind.sigma ** 2

    # Drift components, (n_interior, n_actions) per agent
    bx_p = pursuer.v * np.cos(pursuer.theta)[None, :] + wind.wx[px, py][:, None]
    by_p = pursuer.v * np.sin(pursuer.theta)[None, :] + wind.wy[px, py][:, None]
    bx_e = evader.v * np.cos(evader.theta)[None, :] + wind.wx[ex, ey][:, None]
    by_e = evader.v * np.sin(evader.theta)[None, :] + wind.wy[ex, ey][:, None]

    # The maximum over joint actions separates into the two agents' maxima
    largest = (np.abs(bx_p) + np.abs(by_p)).max(axis=1) + \
        (np.abs(bx_e) + np.abs(by_e)).max(axis=1)
    q = h * largest + 4 * sigma2
    if np.any(q <= 0):
        bad = joint_state(grid, interior[np.argmax(q <= 0)])
        raise DegenerateModelError(
            f"Q_h vanishes at {bad}: all speeds, wind and noise are zero."
        )

    n_p, n_e = pursuer.n_actions, evader.n_actions
    probs = np.empty((len(interior), n_p, n_e, stencil_size))
    q3 = q[:, None, None]
    for j, (b, own) in enumerate([(bx_p, 'p'), (by_p, 'p'),
                                  (bx_e, 'e'), (by_e, 'e')]):
        b = b[:, :, None] if own == 'p' else b[:, None, :]
        probs[..., 2 * j + 1] = (sigma2 / 2 + h * np.maximum(b, 0)) / q3
        probs[..., 2 * j + 2] = (sigma2 / 2 + h * np.maximum(-b, 0)) / q3
    stay = 1.0 - probs[..., 1:].sum(axis=-1)
    if np.any(stay < -negative_tolerance):
        raise AssertionError(
            f"Negative stay probability {stay.min()} in the kernel."
        )
    probs[..., 0] = np.maximum(stay, 0.0)
    total = probs.sum(axis=-1)
    if np.any(np.abs(total - 1) > 1e-12):
        raise AssertionError("Kernel rows do not sum to one.")

    strides = np.array([grid.height * grid.width * grid.height,
                        grid.width * grid.height, grid.height, 1])
    successors = interior[:, None] + (stencil_offsets @ strides)[None, :]
    log.debug(f"Built kernel over {len(interior)} interior states "
              f"of {grid.n_states}.")
    return TransitionKernel(
        grid, wind, agents, classes=classes, interior=interior,
        successors=successors, probs=probs, holding_times=h ** 2 / q
    )
