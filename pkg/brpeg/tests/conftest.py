import pytest
import astropy.units as u

from ..grid import GridSpec, WindField, AgentSpec, generate_wind, speed_unit, noise_unit
from ..mcam import build_kernel
from ..levelk import build_hierarchy


def desk_arena(**kwargs):
    """5x5 grid: a 3x3 playable arena inside the crash ring."""
    return GridSpec(5, 5, **kwargs)


@pytest.fixture(scope='session')
def arena():
    return desk_arena(evasion=[(3, 3)])


@pytest.fixture(scope='session')
def kernel(arena):
    wind = generate_wind(arena, seed=1, max_speed=0.3 * speed_unit,
                         sigma_w=0.4 * noise_unit)
    return build_kernel(arena, wind, (AgentSpec(), AgentSpec()))


@pytest.fixture(scope='session')
def calm_kernel():
    grid = desk_arena()
    return build_kernel(grid, WindField.zeros(grid, sigma_w=0.4 * noise_unit),
                        (AgentSpec(), AgentSpec()))


@pytest.fixture(scope='session')
def hierarchy(kernel):
    return build_hierarchy(kernel, 4, 4, tol=1e-11)


@pytest.fixture(scope='session')
def bundled():
    """The bundled 18x18 world with its full level-k ladder."""
    from ..config import load_config, example_config_path
    config = load_config(example_config_path())
    grid = config.grid()
    kernel = build_kernel(grid, config.wind(grid), config.agents())
    ladder = build_hierarchy(kernel, config.k_max('pursuer'), config.k_max('evader'),
                             level0_variant=config['agents']['level0'],
                             tol=config['solver']['tol'])
    return config, kernel, ladder


@pytest.fixture(scope='session')
def still_evader_kernel(arena):
    # The evader's headings have no effect when it cannot move
    return build_kernel(arena, WindField.zeros(arena, sigma_w=0.4 * noise_unit),
                        (AgentSpec(), AgentSpec(speed=0 * u.m / u.s)))
