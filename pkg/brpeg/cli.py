"""
Command-line front end: ``brpeg build|solve|simulate|infer|run CONFIG``.
"""
import json
import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import typer
from astropy import log
from rich.console import Console
from rich.table import Table as RichTable

from .config import ExperimentConfig, ConfigError
from .grid import joint_index
from .mcam import TransitionKernel, DegenerateModelError, build_kernel, kernel_hash
from .levelk import Hierarchy, ConvergenceError, build_hierarchy, opponent
from .simulate import (
    Trajectory, rollout, run_match, game_seed, level_matrix_experiment
)
from .inference import (
    DynamicLevelController, infer_fixed, belief_heatmap, heatmap_to_csv
)

__all__ = [
    'app',
    'main',
    'RunManifest',
    'cmd_build',
    'cmd_solve',
    'cmd_simulate',
    'cmd_infer'
]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

app = typer.Typer(
    name='brpeg',
    help='Level-k pursuit-evasion games on a discretized stochastic grid.',
    add_completion=False,
)

console = Console()


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, data):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def _now():
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


@dataclass
class RunManifest:
    """
    Record of one command: every artifact written, with its sha256.

    Timestamps make the manifest itself differ between runs; the listed
    artifacts do not.
    """
    command: str
    config_hash: str
    version: str
    started: str = field(default_factory=_now)
    finished: str = None
    artifacts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def add(self, path, root):
        path = Path(path)
        self.artifacts[str(path.relative_to(root))] = sha256_file(path)

    def write(self, path):
        self.finished = _now()
        _write_json(path, dict(
            command=self.command, config_hash=self.config_hash,
            version=self.version, started=self.started, finished=self.finished,
            artifacts=self.artifacts, summary=self.summary
        ))


def _manifest(config, command):
    from . import __version__
    return RunManifest(command, config.content_hash, str(__version__))


def run_directory(config):
    """Artifact directory of a configuration, keyed by its content hash."""
    path = config.output_dir / f"run-{config.content_hash[:16]}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_build(config, manifest=None):
    """
    Build (or load from cache) the transition kernel of a configuration.

    Returns
    -------
    kernel : ~brpeg.TransitionKernel
    """
    grid = config.grid()
    wind = config.wind(grid)
    agents = config.agents()
    key = kernel_hash(grid, wind, agents)
    cache = config.output_dir / 'cache'
    cache.mkdir(parents=True, exist_ok=True)
    path = cache / f"kernel-{key[:16]}.nc"
    if path.exists():
        log.info(f"Kernel cache hit: {path}")
        kernel = TransitionKernel.load(path, expected_hash=key)
    else:
        log.info(f"Building kernel over {grid.n_states} joint states")
        kernel = build_kernel(grid, wind, agents)
        kernel.save(path)
    run_dir = run_directory(config)
    wind.to_csv(run_dir / 'wind.csv')
    if manifest is not None:
        manifest.add(path, config.output_dir)
        manifest.add(run_dir / 'wind.csv', config.output_dir)
        manifest.summary['kernel'] = dict(
            states=kernel.n_states, interior=kernel.n_interior,
            joint_actions=kernel.n_actions[0] * kernel.n_actions[1],
            content_hash=kernel.content_hash
        )
    return kernel


def cmd_solve(config, kernel=None, progress=False, manifest=None, csv=False):
    """
    Solve the level-k hierarchy of a configuration.

    Returns
    -------
    hierarchy : ~brpeg.Hierarchy
    """
    if kernel is None:
        kernel = cmd_build(config, manifest=manifest)
    run_dir = run_directory(config)
    path = run_dir / 'hierarchy.nc'
    if path.exists():
        log.info(f"Hierarchy cache hit: {path}")
        hierarchy = Hierarchy.load(path, kernel=kernel)
    else:
        solver = config['solver']
        hierarchy = build_hierarchy(
            kernel, config.k_max('pursuer'), config.k_max('evader'),
            level0_variant=config['agents']['level0'], tol=solver['tol'],
            max_iterations=solver['max_iterations'], progress=progress
        )
        hierarchy.save(path)
    written = [path]
    summary = hierarchy.summary()
    _write_json(run_dir / 'hierarchy.json', summary)
    written.append(run_dir / 'hierarchy.json')
    nash_path = run_dir / 'nash.json'
    if hierarchy.nash is not None:
        _write_json(nash_path, dict(
            fixed_point_level=hierarchy.fixed_point[0],
            fixed_point_agent=hierarchy.fixed_point[1], **hierarchy.nash.to_dict()
        ))
        written.append(nash_path)
    elif nash_path.exists():
        nash_path.unlink()
    if csv:
        written.extend(hierarchy.to_csv(run_dir / 'policies'))
    if manifest is not None:
        for p in written:
            manifest.add(p, config.output_dir)
        manifest.summary['hierarchy'] = summary
    return hierarchy


def _print_table(table, title):
    rich_table = RichTable(title=title)
    for name in table.colnames:
        rich_table.add_column(name)
    for row in table:
        rich_table.add_row(*[str(v) for v in row])
    console.print(rich_table)


def cmd_simulate(config, kernel=None, hierarchy=None, progress=False,
                 manifest=None):
    """
    Play the configured match, or the level matrix if one is configured.

    Returns
    -------
    result : ~brpeg.MatchStats or ~brpeg.LevelMatrix
    """
    if kernel is None:
        kernel = cmd_build(config, manifest=manifest)
    if hierarchy is None:
        hierarchy = cmd_solve(config, kernel, progress, manifest)
    sim = config['simulation']
    s0 = joint_index(kernel.grid, config.start_state())
    run_dir = run_directory(config)
    written = []
    if sim['matrix'] is not None:
        matrix = sim['matrix']
        result = level_matrix_experiment(
            hierarchy, kernel, s0, fixed_agent=matrix['fixed_agent'],
            fixed_level=matrix['fixed_level'], levels=matrix['levels'],
            n_games=sim['n_games'], seed=sim['seed'], max_steps=sim['max_steps'],
            exact=matrix['exact'], progress=progress
        )
        result.to_json(run_dir / 'matrix.json')
        result.write(run_dir / 'matrix.txt')
        written += [run_dir / 'matrix.json', run_dir / 'matrix.txt']
        _print_table(result.to_table(),
                     f"{matrix['fixed_agent']} fixed at level {matrix['fixed_level']}")
        summary = result.to_dict()
    else:
        levels = dict(
            pursuer=sim['pursuer_level'] if sim['pursuer_level'] is not None
            else config.k_max('pursuer'),
            evader=sim['evader_level'] if sim['evader_level'] is not None
            else config.k_max('evader'),
        )
        pursuer = hierarchy.policy('pursuer', levels['pursuer'])
        evader = hierarchy.policy('evader', levels['evader'])
        result = run_match(
            kernel, pursuer, evader, s0, sim['n_games'], seed=sim['seed'],
            max_steps=sim['max_steps'], progress=progress,
            keep_trajectories=sim['trajectories'] > 0
        )
        result.to_json(run_dir / 'match.json')
        table = result.to_table(
            f"k_pursuer={levels['pursuer']} vs k_evader={levels['evader']}"
        )
        table.write(run_dir / 'match.txt', format='ascii.fixed_width',
                    overwrite=True)
        written += [run_dir / 'match.json', run_dir / 'match.txt']
        if sim['trajectories'] > 0:
            directory = run_dir / 'trajectories'
            directory.mkdir(exist_ok=True)
            for g, trajectory in enumerate(result.trajectories[:sim['trajectories']]):
                path = directory / f"game-{g:04d}.csv"
                trajectory.to_csv(path, kernel.grid)
                written.append(path)
        _print_table(table, 'Match')
        summary = result.to_dict()
    if manifest is not None:
        for p in written:
            manifest.add(p, config.output_dir)
        manifest.summary['simulation'] = summary
    return result


def cmd_infer(config, kernel=None, hierarchy=None, progress=False, manifest=None):
    """
    Infer the opponent's level on a recorded or simulated game.

    Returns
    -------
    beliefs : list of ~brpeg.Belief
    schedule : ~brpeg.LevelSchedule or None
        Only in dynamic mode
    """
    if kernel is None:
        kernel = cmd_build(config, manifest=manifest)
    if hierarchy is None:
        hierarchy = cmd_solve(config, kernel, progress, manifest)
    inf = config['inference']
    observer, observed = inf['observer'], opponent(inf['observer'])
    run_dir = run_directory(config)
    written = []
    s0 = joint_index(kernel.grid, config.start_state())
    players = {observed: hierarchy.policy(observed, inf['opponent_level'])}
    schedule = None

    if inf['mode'] == 'dynamic':
        controller = DynamicLevelController(
            kernel, hierarchy, observer, k_max=config.k_max(observer),
            window_w=inf['window']
        )
        players[observer] = controller
    else:
        players[observer] = hierarchy.policy(observer, inf['observer_level'])

    if inf['trajectory'] is not None:
        trajectory = Trajectory.from_csv(config.resolve(inf['trajectory']),
                                         kernel.grid)
        if inf['mode'] == 'dynamic':
            controller.reset(trajectory.states[0])
            for state in trajectory.states[1:]:
                controller.observe(state)
    else:
        trajectory = rollout(kernel, players['pursuer'], players['evader'], s0,
                             seed=game_seed(inf['seed'], 0))
        if inf['mode'] == 'dynamic' and trajectory.outcome is not None:
            # the controller is not told about the absorbing transition
            controller.observe(trajectory.states[-1])
        path = run_dir / 'inference-trajectory.csv'
        trajectory.to_csv(path, kernel.grid)
        written.append(path)

    if inf['mode'] == 'dynamic':
        beliefs = controller.beliefs
        schedule = controller.schedule
        schedule.to_csv(run_dir / 'schedule.csv')
        written.append(run_dir / 'schedule.csv')
    else:
        beliefs = infer_fixed(kernel, hierarchy, observer, inf['observer_level'],
                              trajectory, window_w=inf['window'],
                              k_max=config.k_max(observer))
    if not beliefs:
        raise ValueError("The trajectory has no transitions to infer from.")
    heatmap_to_csv(belief_heatmap(beliefs), run_dir / 'beliefs.csv')
    written.append(run_dir / 'beliefs.csv')

    final = beliefs[-1]
    console.print(
        f"[bold]{observer}[/bold] infers {observed} level "
        f"[cyan]{final.mle_level}[/cyan] after {trajectory.steps} steps "
        f"(true level {inf['opponent_level']}, outcome "
        f"{trajectory.outcome.name if trajectory.outcome is not None else 'truncated'})"
    )
    if manifest is not None:
        for p in written:
            manifest.add(p, config.output_dir)
        manifest.summary['inference'] = dict(
            mode=inf['mode'], observer=observer, final_mle_level=final.mle_level,
            steps=trajectory.steps,
            final_own_level=None if schedule is None or len(schedule.own_levels) == 0
            else int(schedule.own_levels[-1])
        )
    return beliefs, schedule


@contextmanager
def _exit_codes():
    """Map failures onto the documented exit codes."""
    try:
        yield
    except ConfigError as err:
        console.print(f"[red]Configuration error:[/red] {err}")
        raise typer.Exit(EXIT_CONFIG)
    except (ConvergenceError, DegenerateModelError) as err:
        console.print(f"[red]Solver error:[/red] {err}")
        raise typer.Exit(EXIT_SOLVER)
    except OSError as err:
        console.print(f"[red]I/O error:[/red] {err}")
        raise typer.Exit(EXIT_IO)
    except ValueError as err:
        console.print(f"[red]Input error:[/red] {err}")
        raise typer.Exit(EXIT_INPUT)


def _run(command, config_path, progress, steps):
    with _exit_codes():
        config = ExperimentConfig.from_file(config_path)
        manifest = _manifest(config, command)
        results = {}
        for step in steps:
            results[step] = step_functions[step](config, progress, manifest, results)
        manifest.write(run_directory(config) / f"manifest-{command}.json")
    return results


step_functions = dict(
    build=lambda c, p, m, r: cmd_build(c, manifest=m),
    solve=lambda c, p, m, r: cmd_solve(c, r.get('build'), p, m),
    simulate=lambda c, p, m, r: cmd_simulate(c, r.get('build'), r.get('solve'), p, m),
    infer=lambda c, p, m, r: cmd_infer(c, r.get('build'), r.get('solve'), p, m),
)

config_argument = typer.Argument(..., help='Experiment configuration (YAML).')
progress_option = typer.Option(True, '--progress/--no-progress',
                               help='Show progress bars.')


@app.command()
def build(config: Path = config_argument, progress: bool = progress_option):
    """Build the transition kernel (cached by content hash)."""
    _run('build', config, progress, ['build'])


@app.command()
def solve(config: Path = config_argument, progress: bool = progress_option,
          csv: bool = typer.Option(False, help='Also write per-level policy CSVs.')):
    """Solve the level-k hierarchy and report a Nash fixed point if found."""
    with _exit_codes():
        cfg = ExperimentConfig.from_file(config)
        manifest = _manifest(cfg, 'solve')
        cmd_solve(cfg, progress=progress, manifest=manifest, csv=csv)
        manifest.write(run_directory(cfg) / 'manifest-solve.json')


@app.command()
def simulate(config: Path = config_argument, progress: bool = progress_option):
    """Play the configured match or level matrix."""
    _run('simulate', config, progress, ['build', 'solve', 'simulate'])


@app.command()
def infer(config: Path = config_argument, progress: bool = progress_option):
    """Infer the opponent's rationality level (fixed or dynamic mode)."""
    _run('infer', config, progress, ['build', 'solve', 'infer'])


@app.command()
def run(config: Path = config_argument, progress: bool = progress_option):
    """Build, solve, simulate and infer in one go."""
    _run('run', config, progress, ['build', 'solve', 'simulate', 'infer'])


def main():
    app()
