from enum import IntEnum
from dataclasses import dataclass

import numpy as np
import pandas as pd
import astropy.units as u
from astropy import log

__all__ = [
    'GridSpec',
    'WindField',
    'AgentSpec',
    'JointState',
    'TerminalClass',
    'classify_state',
    'classify_all',
    'terminal_reward',
    'evader_reward',
    'generate_wind',
    'joint_index',
    'joint_state',
    'centroid'
]

length_unit = u.m
speed_unit = u.m / u.s
noise_unit = u.m / u.s ** 0.5

compass_headings = np.array([0, np.pi / 2, np.pi, 3 * np.pi / 2]) * u.rad


class TerminalClass(IntEnum):
    """
    Category of a joint state.

    Crash classes take precedence over capture, which takes precedence
    over evasion.
    """
    INTERIOR = 0
    CRASH_PURSUER = 1
    CRASH_EVADER = 2
    CRASH_BOTH = 3
    CAPTURE = 4
    EVASION = 5

    @property
    def is_terminal(self):
        return self is not TerminalClass.INTERIOR


# Pursuer's terminal reward G_h for each class, indexed by class value
reward_table = np.array([0., -1., 1., 0., 1., -1.])


@dataclass(frozen=True)
class JointState:
    """Cells occupied by the pursuer and the evader."""
    pursuer_cell: tuple
    evader_cell: tuple

    def __post_init__(self):
        object.__setattr__(self, 'pursuer_cell', tuple(int(i) for i in self.pursuer_cell))
        object.__setattr__(self, 'evader_cell', tuple(int(i) for i in self.evader_cell))
        if len(self.pursuer_cell) != 2 or len(self.evader_cell) != 2:
            raise ValueError("Cells must be (x, y) pairs.")

    def swapped(self):
        """Return the state with the agents' cells exchanged."""
        return JointState(self.evader_cell, self.pursuer_cell)

    def __iter__(self):
        return iter(self.pursuer_cell + self.evader_cell)


def _as_cells(cells, name, width, height):
    result = set()
    for cell in cells:
        x, y = (int(c) for c in cell)
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(
                f"{name} cell {(x, y)} lies outside the {width}x{height} grid."
            )
        result.add((x, y))
    return frozenset(result)


class GridSpec(object):
    """
    Discretized arena: cells, obstacles, evasion region and capture radius.

    The outermost ring of cells is the boundary of the arena, so every
    perimeter cell is a crash cell in addition to ``obstacles``.
    """
    @u.quantity_input(cell_size=u.m, capture_radius=u.m)
    def __init__(self, width, height, cell_size=1 * u.m, obstacles=(),
                 evasion=(), capture_radius=None):
        """
        Parameters
        ----------
        width : int
            Number of cells along x (at least 2)
        height : int
            Number of cells along y (at least 2)
        cell_size : ~astropy.units.Quantity
            Side length h of one cell
        obstacles : iterable of (x, y)
            Obstacle cells
        evasion : iterable of (x, y)
            Cells of the evasion region
        capture_radius : ~astropy.units.Quantity or None (optional)
            Capture radius rho between cell centroids. Defaults to half a
            cell, so that only co-located agents are captured.
        """
        if int(width) != width or int(height) != height:
            raise ValueError("Grid dimensions must be integers.")
        if width < 2 or height < 2:
            raise ValueError("Grid dimensions must be at least 2x2.")
        if cell_size <= 0 * u.m:
            raise ValueError("cell_size must be positive.")
        self.width = int(width)
        self.height = int(height)
        self.cell_size = cell_size.to(length_unit)
        self.obstacles = _as_cells(obstacles, 'Obstacle', self.width, self.height)
        self.evasion = _as_cells(evasion, 'Evasion', self.width, self.height)
        overlap = self.obstacles & self.evasion
        if overlap:
            raise ValueError(
                f"Cells {sorted(overlap)} are both obstacle and evasion cells."
            )
        if capture_radius is None:
            capture_radius = 0.5 * self.cell_size
        if capture_radius < 0 * u.m:
            raise ValueError("capture_radius must be non-negative.")
        self.capture_radius = capture_radius.to(length_unit)

        crash = np.zeros(self.shape, dtype=bool)
        crash[[0, -1], :] = True
        crash[:, [0, -1]] = True
        for x, y in self.obstacles:
            crash[x, y] = True
        evade = np.zeros(self.shape, dtype=bool)
        for x, y in self.evasion:
            evade[x, y] = True
        if np.any(evade & crash):
            log.warning("Evasion cells on the perimeter are unreachable: "
                        "crash takes precedence over evasion.")
        crash.setflags(write=False)
        evade.setflags(write=False)
        self._crash = crash
        self._evade = evade

    @classmethod
    @u.quantity_input(cell_size=u.m, capture_radius=u.m)
    def from_map(cls, rows, cell_size=1 * u.m, capture_radius=None):
        """
        Build a grid from an ASCII map.

        The first row is the top of the arena (largest y). Characters are
        ``#`` for obstacles, ``E`` for evasion cells and anything else for
        free cells.

        Parameters
        ----------
        rows : list of str or str
            Map rows, all of equal length
        cell_size : ~astropy.units.Quantity
            Side length h of one cell
        capture_radius : ~astropy.units.Quantity or None (optional)
            Capture radius
        """
        if isinstance(rows, str):
            rows = [row.strip() for row in rows.strip().splitlines()]
        height = len(rows)
        width = len(rows[0]) if height > 0 else 0
        if any(len(row) != width for row in rows):
            raise ValueError("All map rows must have the same length.")
        obstacles, evasion = [], []
        for i, row in enumerate(rows):
            y = height - 1 - i
            for x, char in enumerate(row):
                if char == '#':
                    obstacles.append((x, y))
                elif char == 'E':
                    evasion.append((x, y))
        return cls(width, height, cell_size=cell_size, obstacles=obstacles,
                   evasion=evasion, capture_radius=capture_radius)

    @property
    def shape(self):
        return (self.width, self.height)

    @property
    def state_shape(self):
        """Shape of the joint state space, (px, py, ex, ey)."""
        return (self.width, self.height, self.width, self.height)

    @property
    def n_cells(self):
        return self.width * self.height

    @property
    def n_states(self):
        return self.n_cells ** 2

    @property
    def h(self):
        """Cell size in meters, as a float."""
        return float(self.cell_size.to_value(length_unit))

    @property
    def rho(self):
        """Capture radius in meters, as a float."""
        return float(self.capture_radius.to_value(length_unit))

    @property
    def crash_mask(self):
        """Boolean (width, height) mask of obstacle and perimeter cells."""
        return self._crash

    @property
    def evasion_mask(self):
        """Boolean (width, height) mask of evasion cells."""
        return self._evade

    def contains(self, cell):
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def to_dict(self):
        """Plain description of the grid, used for hashing."""
        return dict(
            width=self.width, height=self.height, cell_size=repr(self.h),
            capture_radius=repr(self.rho),
            obstacles=sorted(self.obstacles), evasion=sorted(self.evasion)
        )

    def __eq__(self, other):
        return isinstance(other, GridSpec) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((self.width, self.height, self.h, self.rho,
                     self.obstacles, self.evasion))

    def __repr__(self):
        return (
            f"<GridSpec {self.width}x{self.height}, h={self.cell_size:.3g}, "
            f"rho={self.capture_radius:.3g}, {len(self.obstacles)} obstacles, "
            f"{len(self.evasion)} evasion cells>"
        )


class WindField(object):
    """
    Mean wind velocity per cell and the spatially constant noise intensity.
    """
    @u.quantity_input(mean_x=speed_unit, mean_y=speed_unit, sigma_w=noise_unit)
    def __init__(self, mean_x, mean_y, sigma_w=0.4 * noise_unit):
        """
        Parameters
        ----------
        mean_x : ~astropy.units.Quantity
            Mean wind velocity along x, shape (width, height)
        mean_y : ~astropy.units.Quantity
            Mean wind velocity along y, shape (width, height)
        sigma_w : ~astropy.units.Quantity
            Noise intensity of the wind
        """
        if mean_x.shape != mean_y.shape or mean_x.ndim != 2:
            raise ValueError("Wind components must be 2D arrays of equal shape.")
        if sigma_w < 0 * noise_unit:
            raise ValueError("sigma_w must be non-negative.")
        wx = np.array(mean_x.to_value(speed_unit), dtype=np.float64)
        wy = np.array(mean_y.to_value(speed_unit), dtype=np.float64)
        wx.setflags(write=False)
        wy.setflags(write=False)
        self.wx = wx
        self.wy = wy
        self.sigma_w = sigma_w.to(noise_unit)

    @classmethod
    @u.quantity_input(sigma_w=noise_unit)
    def zeros(cls, grid, sigma_w=0.4 * noise_unit):
        """Calm wind field with noise intensity ``sigma_w``."""
        zeros = np.zeros(grid.shape) * speed_unit
        return cls(zeros, zeros, sigma_w=sigma_w)

    @property
    def shape(self):
        return self.wx.shape

    @property
    def sigma(self):
        """Noise intensity as a float in canonical units."""
        return float(self.sigma_w.to_value(noise_unit))

    @property
    def mean_x(self):
        return self.wx * speed_unit

    @property
    def mean_y(self):
        return self.wy * speed_unit

    def at(self, cell):
        """Mean wind vector at ``cell``."""
        x, y = cell
        return np.array([self.wx[x, y], self.wy[x, y]]) * speed_unit

    def check_grid(self, grid):
        if self.shape != grid.shape:
            raise ValueError(
                f"Wind field of shape {self.shape} does not match grid {grid.shape}."
            )

    def to_dataframe(self):
        """Flat table of (x, y, w_x, w_y) in m/s."""
        x, y = np.meshgrid(np.arange(self.shape[0]), np.arange(self.shape[1]),
                           indexing='ij')
        return pd.DataFrame(dict(
            x=x.ravel(), y=y.ravel(), w_x=self.wx.ravel(), w_y=self.wy.ravel()
        ))

    def to_csv(self, path):
        """Write the flat wind table, with full float precision."""
        self.to_dataframe().to_csv(path, index=False, float_format='%.17g')

    @classmethod
    @u.quantity_input(sigma_w=noise_unit)
    def from_csv(cls, path, sigma_w=0.4 * noise_unit, grid=None):
        """
        Read a wind table written by `~brpeg.WindField.to_csv`.

        Parameters
        ----------
        path : str or ~pathlib.Path
            CSV file with columns x, y, w_x, w_y
        sigma_w : ~astropy.units.Quantity
            Noise intensity
        grid : ~brpeg.GridSpec or None (optional)
            If given, the table must cover exactly this grid
        """
        table = pd.read_csv(path)
        missing = {'x', 'y', 'w_x', 'w_y'} - set(table.columns)
        if missing:
            raise ValueError(f"Wind table {path} lacks columns {sorted(missing)}.")
        width = int(table.x.max()) + 1
        height = int(table.y.max()) + 1
        if grid is not None:
            width, height = grid.shape
        if len(table) != width * height:
            raise ValueError(
                f"Wind table {path} has {len(table)} rows, expected {width * height}."
            )
        x, y = table.x.values, table.y.values
        outside = (x < 0) | (x >= width) | (y < 0) | (y >= height)
        if outside.any():
            i = int(np.argmax(outside))
            raise ValueError(
                f"Wind table {path} has cell {(int(x[i]), int(y[i]))} outside the "
                f"{width}x{height} grid."
            )
        wx = np.full((width, height), np.nan)
        wy = np.full((width, height), np.nan)
        wx[x, y] = table.w_x.values
        wy[x, y] = table.w_y.values
        if np.isnan(wx).any() or np.isnan(wy).any():
            raise ValueError(f"Wind table {path} does not cover every cell.")
        return cls(wx * speed_unit, wy * speed_unit, sigma_w=sigma_w)

    def __eq__(self, other):
        return (isinstance(other, WindField) and self.sigma == other.sigma and
                np.array_equal(self.wx, other.wx) and
                np.array_equal(self.wy, other.wy))

    def __repr__(self):
        speed = np.hypot(self.wx, self.wy)
        return (
            f"<WindField {self.shape[0]}x{self.shape[1]}, "
            f"max|w|={speed.max():.3g} m/s, sigma_w={self.sigma_w:.3g}>"
        )


class AgentSpec(object):
    """Speed and heading set of one agent."""
    @u.quantity_input(speed=speed_unit, headings=u.rad)
    def __init__(self, speed=1 * speed_unit, headings=None):
        """
        Parameters
        ----------
        speed : ~astropy.units.Quantity
            Agent speed v
        headings : ~astropy.units.Quantity or None (optional)
            Ordered heading angles. Defaults to the four compass headings
            0, pi/2, pi and 3 pi/2.
        """
        if headings is None:
            headings = compass_headings
        headings = np.atleast_1d(headings.to(u.rad))
        if len(headings) == 0:
            raise ValueError("An agent needs at least one heading.")
        wrapped = np.round(np.mod(headings.value, 2 * np.pi), 12)
        if len(np.unique(wrapped)) != len(wrapped):
            raise ValueError("Duplicate headings in action set.")
        if speed < 0 * speed_unit:
            raise ValueError("speed must be non-negative.")
        self.speed = speed.to(speed_unit)
        self.headings = headings

    @property
    def v(self):
        return float(self.speed.to_value(speed_unit))

    @property
    def theta(self):
        return np.array(self.headings.to_value(u.rad), dtype=np.float64)

    @property
    def n_actions(self):
        return len(self.headings)

    def to_dict(self):
        return dict(speed=repr(self.v), headings=[repr(t) for t in self.theta])

    def __eq__(self, other):
        return isinstance(other, AgentSpec) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return (f"<AgentSpec v={self.speed:.3g}, "
                f"headings={np.round(self.headings.to_value(u.deg), 1)} deg>")


def joint_index(grid, s):
    """
    Flat index of joint state ``s`` (C-order over (px, py, ex, ey)).
    """
    _check_bounds(grid, s)
    return int(np.ravel_multi_index(tuple(s), grid.state_shape))


def joint_state(grid, index):
    """Joint state with flat index ``index``."""
    if not 0 <= index < grid.n_states:
        raise ValueError(f"State index {index} outside [0, {grid.n_states}).")
    px, py, ex, ey = np.unravel_index(int(index), grid.state_shape)
    return JointState((px, py), (ex, ey))


def centroid(grid, cell):
    """Centroid ((x + 1/2) h, (y + 1/2) h) of ``cell``."""
    return (np.asarray(cell, dtype=float) + 0.5) * grid.cell_size


def _check_bounds(grid, s):
    if not (grid.contains(s.pursuer_cell) and grid.contains(s.evader_cell)):
        raise ValueError(f"{s} lies outside the {grid.width}x{grid.height} grid.")


def classify_state(grid, s):
    """
    Classify a joint state into interior or one of the terminal classes.

    Parameters
    ----------
    grid : ~brpeg.GridSpec
        Arena
    s : ~brpeg.JointState
        Joint state

    Returns
    -------
    cls : ~brpeg.TerminalClass
    """
    _check_bounds(grid, s)
    p_crash = grid.crash_mask[s.pursuer_cell]
    e_crash = grid.crash_mask[s.evader_cell]
    if p_crash and e_crash:
        return TerminalClass.CRASH_BOTH
    if p_crash:
        return TerminalClass.CRASH_PURSUER
    if e_crash:
        return TerminalClass.CRASH_EVADER
    dx = s.pursuer_cell[0] - s.evader_cell[0]
    dy = s.pursuer_cell[1] - s.evader_cell[1]
    if grid.h * np.hypot(dx, dy) <= grid.rho:
        return TerminalClass.CAPTURE
    if grid.evasion_mask[s.evader_cell]:
        return TerminalClass.EVASION
    return TerminalClass.INTERIOR


def classify_all(grid):
    """
    Classify every joint state of ``grid``.

    Returns
    -------
    classes : ~numpy.ndarray
        int8 array of `~brpeg.TerminalClass` values, indexed by the flat
        joint state index
    """
    shape = grid.state_shape
    crash = grid.crash_mask
    p_crash = np.broadcast_to(crash[:, :, None, None], shape)
    e_crash = np.broadcast_to(crash[None, None, :, :], shape)
    x = np.arange(grid.width)
    y = np.arange(grid.height)
    dx = x[:, None, None, None] - x[None, None, :, None]
    dy = y[None, :, None, None] - y[None, None, None, :]
    capture = np.broadcast_to(grid.h * np.hypot(dx, dy) <= grid.rho, shape)
    evade = np.broadcast_to(grid.evasion_mask[None, None, :, :], shape)
    classes = np.select(
        [p_crash & e_crash, p_crash, e_crash, capture, evade],
        [TerminalClass.CRASH_BOTH, TerminalClass.CRASH_PURSUER,
         TerminalClass.CRASH_EVADER, TerminalClass.CAPTURE,
         TerminalClass.EVASION],
        default=TerminalClass.INTERIOR
    )
    return classes.astype(np.int8).ravel()


def terminal_reward(cls):
    """
    Pursuer's terminal reward G_h for a state class.

    Capture and a lone evader crash pay +1, evasion and a lone pursuer crash
    pay -1, a double crash and interior states pay 0.
    """
    return float(reward_table[int(cls)])


def evader_reward(cls):
    """Evader's terminal reward, the negation of `terminal_reward`."""
    return -terminal_reward(cls)


@u.quantity_input(max_speed=speed_unit, sigma_w=noise_unit)
def generate_wind(grid, seed, max_speed, sigma_w=0.4 * noise_unit):
    """
    Draw a random mean wind field.

    Each cell gets an independent direction, uniform on [0, 2 pi), and an
    independent magnitude, uniform on [0, ``max_speed``]. Draws come from a
    Philox counter-based generator keyed by ``seed``: all directions first,
    then all magnitudes, in C-order over (x, y).

    Parameters
    ----------
    grid : ~brpeg.GridSpec
        Arena
    seed : int
        Generator key
    max_speed : ~astropy.units.Quantity
        Upper bound on the wind speed in any cell
    sigma_w : ~astropy.units.Quantity
        Noise intensity attached to the field

    Returns
    -------
    wind : ~brpeg.WindField
    """
    if max_speed < 0 * speed_unit:
        raise ValueError("max_speed must be non-negative.")
    rng = np.random.Generator(np.random.Philox(seed))
    direction = rng.uniform(0, 2 * np.pi, size=grid.shape)
    magnitude = rng.uniform(0, 1, size=grid.shape) * max_speed.to_value(speed_unit)
    return WindField(
        magnitude * np.cos(direction) * speed_unit,
        magnitude * np.sin(direction) * speed_unit,
        sigma_w=sigma_w
    )
