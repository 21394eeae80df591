import json
import hashlib
from copy import deepcopy
from pathlib import Path

import numpy as np
import yaml
import astropy.units as u

from .grid import (
    GridSpec, WindField, AgentSpec, JointState, classify_state, generate_wind,
    length_unit, speed_unit, noise_unit
)

__all__ = [
    'ExperimentConfig',
    'ConfigError',
    'load_config',
    'example_config_path'
]

schema_version = 1

_required = object()

# Allowed keys and defaults per section, in canonical units
schema = {
    'grid': {
        'width': None, 'height': None, 'cell_size': 1.0,
        'capture_radius': None, 'map': None, 'obstacles': [],
        'obstacle_blocks': [], 'evasion': [], 'evasion_blocks': [],
    },
    'wind': {
        'seed': 0, 'max_speed': 0.0, 'sigma_w': 0.4, 'file': None,
    },
    'agents': {
        'pursuer': {}, 'evader': {}, 'level0': 'uniform',
    },
    'solver': {
        'tol': 1e-9, 'max_iterations': None,
    },
    'simulation': {
        'pursuer_start': _required, 'evader_start': _required,
        'n_games': 1500, 'seed': 0, 'max_steps': None,
        'pursuer_level': None, 'evader_level': None, 'matrix': None,
        'trajectories': 0,
    },
    'inference': {
        'mode': 'fixed', 'observer': 'evader', 'observer_level': None,
        'opponent_level': 2, 'window': 10, 'seed': 0, 'trajectory': None,
    },
    'output': {
        'directory': 'output',
    },
}

agent_schema = {
    'speed': 1.0, 'headings_deg': [0.0, 90.0, 180.0, 270.0], 'k_max': 1,
}

matrix_schema = {
    'fixed_agent': 'evader', 'fixed_level': 2, 'levels': None, 'exact': False,
}


class ConfigError(ValueError):
    """
    Invalid experiment configuration.

    Carries the dotted ``path`` of the offending entry and, when known,
    its 1-based ``line`` in the config file.
    """
    def __init__(self, message, path='', line=None, source=None):
        self.message = message
        self.path = path
        self.line = line
        self.source = source
        where = source or '<config>'
        if line is not None:
            where += f":{line}"
        if path:
            where += f" [{path}]"
        super().__init__(f"{where}: {message}")


def _dotted(keys):
    text = ''
    for key in keys:
        text += f"[{key}]" if isinstance(key, int) else (f".{key}" if text else key)
    return text


class _Reader(object):
    """Typed access to raw YAML data, reporting errors with line numbers."""
    def __init__(self, raw, root=None, source=None):
        self.raw = raw
        self.root = root
        self.source = source

    def line(self, keys):
        node, found = self.root, None
        for key in keys:
            if node is None:
                break
            found = node
            if isinstance(node, yaml.MappingNode):
                node = next((v for k, v in node.value if k.value == key), None)
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) \
                    and key < len(node.value):
                node = node.value[key]
            else:
                node = None
        node = node if node is not None else found
        return None if node is None else node.start_mark.line + 1

    def error(self, keys, message):
        return ConfigError(message, _dotted(keys), self.line(keys), self.source)

    def value(self, keys, default=_required):
        data = self.raw
        for key in keys:
            if isinstance(data, dict) and key in data:
                data = data[key]
            else:
                if default is _required:
                    raise self.error(keys, "required entry is missing")
                return deepcopy(default)
        return data

    def number(self, keys, default=_required, integer=False, minimum=None,
               exclusive=False, optional=False):
        value = self.value(keys, default)
        if value is None and optional:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(keys, f"expected a number, got {value!r}")
        if integer:
            if int(value) != value:
                raise self.error(keys, f"expected an integer, got {value!r}")
            value = int(value)
        else:
            value = float(value)
        if minimum is not None and (value < minimum or
                                    (exclusive and value == minimum)):
            bound = '>' if exclusive else '>='
            raise self.error(keys, f"must be {bound} {minimum}, got {value!r}")
        return value

    def choice(self, keys, options, default=_required):
        value = self.value(keys, default)
        if value not in options:
            raise self.error(keys, f"must be one of {list(options)}, got {value!r}")
        return value

    def cell(self, keys, default=_required):
        value = self.value(keys, default)
        if (not isinstance(value, (list, tuple)) or len(value) != 2 or
                any(isinstance(v, bool) or not isinstance(v, int) for v in value)):
            raise self.error(keys, f"expected an [x, y] cell, got {value!r}")
        return [int(v) for v in value]

    def flag(self, keys, default=_required):
        value = self.value(keys, default)
        if not isinstance(value, bool):
            raise self.error(keys, f"expected true or false, got {value!r}")
        return value

    def sequence(self, keys, default=_required):
        value = self.value(keys, default)
        if not isinstance(value, (list, tuple)):
            raise self.error(keys, f"expected a list, got {value!r}")
        return list(value)

    def mapping(self, keys, allowed, default=_required):
        value = self.value(keys, default)
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise self.error(keys, f"expected a mapping, got {value!r}")
        for key in value:
            if key not in allowed:
                raise self.error(list(keys) + [key], "unknown entry")
        return value


def _check_cell(reader, keys, cell, width, height):
    x, y = cell
    if not (0 <= x < width and 0 <= y < height):
        raise reader.error(keys, f"cell {cell} lies outside the "
                                 f"{width}x{height} grid")


def _parse_grid(reader):
    reader.mapping(['grid'], schema['grid'])
    d = schema['grid']
    grid = {}
    rows = reader.value(['grid', 'map'], None)
    if rows is not None:
        if isinstance(rows, str):
            rows = [r.strip() for r in rows.strip().splitlines()]
        if not rows or not all(isinstance(r, str) for r in rows) or \
                len(set(len(r) for r in rows)) != 1:
            raise reader.error(['grid', 'map'], "map rows must be strings of "
                                                "equal length")
        grid['map'] = list(rows)
        grid['width'], grid['height'] = len(rows[0]), len(rows)
        for key in ('width', 'height'):
            given = reader.value(['grid', key], None)
            if given is not None and given != grid[key]:
                raise reader.error(['grid', key], f"disagrees with the map "
                                                  f"({grid[key]})")
    else:
        grid['map'] = None
        grid['width'] = reader.number(['grid', 'width'], integer=True, minimum=2)
        grid['height'] = reader.number(['grid', 'height'], integer=True, minimum=2)
    if grid['width'] < 2 or grid['height'] < 2:
        raise reader.error(['grid'], "grid must be at least 2x2")
    grid['cell_size'] = reader.number(['grid', 'cell_size'], d['cell_size'],
                                      minimum=0, exclusive=True)
    grid['capture_radius'] = reader.number(
        ['grid', 'capture_radius'], None, minimum=0, optional=True
    )
    width, height = grid['width'], grid['height']
    for key, blocks in (('obstacles', 'obstacle_blocks'),
                        ('evasion', 'evasion_blocks')):
        cells = []
        for i, _ in enumerate(reader.sequence(['grid', key], [])):
            cell = reader.cell(['grid', key, i])
            _check_cell(reader, ['grid', key, i], cell, width, height)
            cells.append(cell)
        for i, block in enumerate(reader.sequence(['grid', blocks], [])):
            keys = ['grid', blocks, i]
            if (not isinstance(block, list) or len(block) != 4 or
                    any(not isinstance(v, int) for v in block)):
                raise reader.error(keys, "expected [x0, y0, x1, y1]")
            x0, y0, x1, y1 = block
            _check_cell(reader, keys, (x0, y0), width, height)
            _check_cell(reader, keys, (x1, y1), width, height)
            cells.extend([x, y] for x in range(min(x0, x1), max(x0, x1) + 1)
                         for y in range(min(y0, y1), max(y0, y1) + 1))
        grid[key] = sorted(set(map(tuple, cells)))
        grid[key] = [list(c) for c in grid[key]]
    overlap = set(map(tuple, grid['obstacles'])) & set(map(tuple, grid['evasion']))
    if overlap:
        raise reader.error(['grid', 'evasion'],
                           f"cells {sorted(overlap)} are also obstacles")
    return grid


def _parse_agents(reader):
    reader.mapping(['agents'], schema['agents'], {})
    agents = {}
    for name in ('pursuer', 'evader'):
        reader.mapping(['agents', name], agent_schema, {})
        headings = reader.sequence(['agents', name, 'headings_deg'],
                                   agent_schema['headings_deg'])
        if not headings:
            raise reader.error(['agents', name, 'headings_deg'],
                               "an agent needs at least one heading")
        headings = [reader.number(['agents', name, 'headings_deg', i])
                    for i in range(len(headings))]
        wrapped = np.round(np.mod(headings, 360.0), 9)
        if len(np.unique(wrapped)) != len(wrapped):
            raise reader.error(['agents', name, 'headings_deg'],
                               "duplicate headings")
        agents[name] = dict(
            speed=reader.number(['agents', name, 'speed'], agent_schema['speed'],
                                minimum=0),
            headings_deg=headings,
            k_max=reader.number(['agents', name, 'k_max'], agent_schema['k_max'],
                                integer=True, minimum=1),
        )
    agents['level0'] = reader.choice(['agents', 'level0'],
                                     ('uniform', 'safe_uniform'), 'uniform')
    return agents


def _parse_simulation(reader, grid, agents):
    reader.mapping(['simulation'], schema['simulation'])
    d = schema['simulation']
    sim = {}
    for key in ('pursuer_start', 'evader_start'):
        sim[key] = reader.cell(['simulation', key])
        _check_cell(reader, ['simulation', key], sim[key],
                    grid['width'], grid['height'])
    sim['n_games'] = reader.number(['simulation', 'n_games'], d['n_games'],
                                   integer=True, minimum=1)
    sim['seed'] = reader.number(['simulation', 'seed'], d['seed'],
                                integer=True, minimum=0)
    sim['max_steps'] = reader.number(['simulation', 'max_steps'], None,
                                     integer=True, minimum=1, optional=True)
    sim['trajectories'] = reader.number(['simulation', 'trajectories'],
                                        d['trajectories'], integer=True, minimum=0)
    for key, agent in (('pursuer_level', 'pursuer'), ('evader_level', 'evader')):
        sim[key] = reader.number(['simulation', key], None, integer=True,
                                 minimum=0, optional=True)
        if sim[key] is not None and sim[key] > _depth(agents, agent):
            raise reader.error(['simulation', key],
                               f"level {sim[key]} exceeds the solved ladder "
                               f"(0..{_depth(agents, agent)})")
    matrix = reader.value(['simulation', 'matrix'], None)
    if matrix is not None:
        reader.mapping(['simulation', 'matrix'], matrix_schema)
        keys = ['simulation', 'matrix']
        fixed = reader.choice(keys + ['fixed_agent'], ('pursuer', 'evader'),
                              matrix_schema['fixed_agent'])
        varying = 'pursuer' if fixed == 'evader' else 'evader'
        fixed_level = reader.number(keys + ['fixed_level'],
                                    matrix_schema['fixed_level'],
                                    integer=True, minimum=0)
        if fixed_level > _depth(agents, fixed):
            raise reader.error(keys + ['fixed_level'],
                               f"level {fixed_level} exceeds the solved ladder")
        levels = reader.value(keys + ['levels'], None)
        if levels is None:
            levels = list(range(1, agents[varying]['k_max'] + 1))
        else:
            levels = [reader.number(keys + ['levels', i], integer=True, minimum=0)
                      for i in range(len(reader.sequence(keys + ['levels'])))]
            for i, level in enumerate(levels):
                if level > _depth(agents, varying):
                    raise reader.error(keys + ['levels', i],
                                       f"level {level} exceeds the solved ladder")
        exact = reader.flag(keys + ['exact'], matrix_schema['exact'])
        matrix = dict(fixed_agent=fixed, fixed_level=fixed_level, levels=levels,
                      exact=exact)
    sim['matrix'] = matrix
    return sim


def _parse_inference(reader, agents):
    reader.mapping(['inference'], schema['inference'], {})
    d = schema['inference']
    inf = {}
    inf['mode'] = reader.choice(['inference', 'mode'], ('fixed', 'dynamic'),
                                d['mode'])
    inf['observer'] = reader.choice(['inference', 'observer'],
                                    ('pursuer', 'evader'), d['observer'])
    observed = 'pursuer' if inf['observer'] == 'evader' else 'evader'
    k_max = agents[inf['observer']]['k_max']
    inf['observer_level'] = reader.number(
        ['inference', 'observer_level'], None, integer=True, minimum=0,
        optional=True
    )
    if inf['observer_level'] is None:
        inf['observer_level'] = k_max
    elif inf['observer_level'] > _depth(agents, inf['observer']):
        raise reader.error(['inference', 'observer_level'],
                           "level exceeds the solved ladder")
    inf['opponent_level'] = reader.number(
        ['inference', 'opponent_level'], d['opponent_level'], integer=True,
        minimum=0
    )
    if inf['opponent_level'] > _depth(agents, observed):
        raise reader.error(['inference', 'opponent_level'],
                           "level exceeds the solved ladder")
    inf['window'] = reader.number(['inference', 'window'], d['window'],
                                  integer=True, minimum=1)
    inf['seed'] = reader.number(['inference', 'seed'], d['seed'], integer=True,
                                minimum=0)
    inf['trajectory'] = reader.value(['inference', 'trajectory'], None)
    if inf['trajectory'] is not None and not isinstance(inf['trajectory'], str):
        raise reader.error(['inference', 'trajectory'], "expected a file path")
    return inf


def _depth(agents, agent):
    other = 'evader' if agent == 'pursuer' else 'pursuer'
    return max(agents[agent]['k_max'], agents[other]['k_max'] - 1)


class ExperimentConfig(object):
    """
    Validated experiment description.

    Every downstream artifact is a function of this configuration; its
    `content_hash` keys the kernel cache and the artifact names.
    """
    def __init__(self, data, base_dir='.', source=None):
        self.data = data
        self.base_dir = Path(base_dir)
        self.source = source

    @classmethod
    def from_dict(cls, raw, base_dir='.', source=None, root=None):
        """
        Validate raw configuration data and fill in defaults.

        Raises
        ------
        ConfigError
            On any schema violation.
        """
        reader = _Reader(raw, root, source)
        if not isinstance(raw, dict):
            raise reader.error([], "configuration must be a mapping")
        for key in raw:
            if key != 'version' and key not in schema:
                raise reader.error([key], "unknown section")
        version = reader.value(['version'])
        if version != schema_version:
            raise reader.error(['version'], f"unsupported schema version "
                                            f"{version!r}, expected {schema_version}")
        data = dict(version=schema_version)
        data['grid'] = _parse_grid(reader)
        reader.mapping(['wind'], schema['wind'], {})
        data['wind'] = dict(
            seed=reader.number(['wind', 'seed'], 0, integer=True, minimum=0),
            max_speed=reader.number(['wind', 'max_speed'], 0.0, minimum=0),
            sigma_w=reader.number(['wind', 'sigma_w'], 0.4, minimum=0),
            file=reader.value(['wind', 'file'], None),
        )
        data['agents'] = _parse_agents(reader)
        reader.mapping(['solver'], schema['solver'], {})
        data['solver'] = dict(
            tol=reader.number(['solver', 'tol'], 1e-9, minimum=0, exclusive=True),
            max_iterations=reader.number(['solver', 'max_iterations'], None,
                                         integer=True, minimum=1, optional=True),
        )
        data['simulation'] = _parse_simulation(reader, data['grid'], data['agents'])
        data['inference'] = _parse_inference(reader, data['agents'])
        reader.mapping(['output'], schema['output'], {})
        data['output'] = dict(directory=str(reader.value(['output', 'directory'],
                                                         'output')))
        config = cls(data, base_dir, source)
        try:
            grid = config.grid()
        except ValueError as err:
            raise reader.error(['grid'], str(err))
        start = classify_state(grid, config.start_state())
        if start.is_terminal:
            raise reader.error(['simulation', 'pursuer_start'],
                               f"start state is terminal ({start.name})")
        return config

    @classmethod
    def from_file(cls, path):
        """Read and validate a YAML config file."""
        path = Path(path)
        text = path.read_text()
        try:
            root = yaml.compose(text)
            raw = yaml.safe_load(text)
        except yaml.YAMLError as err:
            mark = getattr(err, 'problem_mark', None)
            raise ConfigError(f"invalid YAML: {getattr(err, 'problem', err)}",
                              line=None if mark is None else mark.line + 1,
                              source=str(path))
        return cls.from_dict(raw, base_dir=path.parent, source=str(path), root=root)

    def __getitem__(self, section):
        return self.data[section]

    def resolve(self, name):
        """Path relative to the config file's directory."""
        path = Path(name)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def output_dir(self):
        """Artifact root; relative paths are taken from the working directory."""
        return Path(self.data['output']['directory'])

    @property
    def content_hash(self):
        """sha256 of the canonical configuration and the package version."""
        from . import __version__
        digest = hashlib.sha256()
        canonical = dict(self.data, package_version=str(__version__))
        canonical['output'] = None
        digest.update(json.dumps(canonical, sort_keys=True,
                                 separators=(',', ':')).encode())
        wind_file = self.data['wind']['file']
        if wind_file is not None:
            digest.update(self.resolve(wind_file).read_bytes())
        return digest.hexdigest()

    def grid(self):
        g = self.data['grid']
        radius = None if g['capture_radius'] is None else \
            g['capture_radius'] * length_unit
        if g['map'] is not None:
            base = GridSpec.from_map(g['map'], cell_size=g['cell_size'] * length_unit,
                                     capture_radius=radius)
            obstacles = set(base.obstacles) | set(map(tuple, g['obstacles']))
            evasion = set(base.evasion) | set(map(tuple, g['evasion']))
        else:
            obstacles, evasion = g['obstacles'], g['evasion']
        return GridSpec(g['width'], g['height'], cell_size=g['cell_size'] * length_unit,
                        obstacles=obstacles, evasion=evasion, capture_radius=radius)

    def wind(self, grid=None):
        w = self.data['wind']
        grid = self.grid() if grid is None else grid
        sigma_w = w['sigma_w'] * noise_unit
        if w['file'] is not None:
            return WindField.from_csv(self.resolve(w['file']), sigma_w=sigma_w,
                                      grid=grid)
        return generate_wind(grid, w['seed'], w['max_speed'] * speed_unit,
                             sigma_w=sigma_w)

    def agents(self):
        return tuple(
            AgentSpec(self.data['agents'][name]['speed'] * speed_unit,
                      self.data['agents'][name]['headings_deg'] * u.deg)
            for name in ('pursuer', 'evader')
        )

    def k_max(self, agent):
        return self.data['agents'][agent]['k_max']

    def start_state(self):
        sim = self.data['simulation']
        return JointState(sim['pursuer_start'], sim['evader_start'])

    def __repr__(self):
        g = self.data['grid']
        return (f"<ExperimentConfig {g['width']}x{g['height']} "
                f"from {self.source or '<dict>'}>")


def load_config(path):
    """Shortcut for `ExperimentConfig.from_file`."""
    return ExperimentConfig.from_file(path)


def example_config_path():
    """Path of the bundled example configuration."""
    return Path(__file__).parent / 'data' / 'example_config.yaml'
