import numpy as np
import pytest

from sfim.config_io import dbm_to_watts
from sfim.geometry import ScenarioConfig, build_geometry, generate_scenario

WAVELENGTH = 299792458.0 / 28e9
NOISE_W = dbm_to_watts(-104.0)
P_MAX = dbm_to_watts(25.0)


def small_geometry(num_users=2, layers=3, nx=3, nz=3, morph_frac=0.5):
    return build_geometry(wavelength=WAVELENGTH, num_users=num_users, layers=layers,
                          nx=nx, nz=nz, layer_offsets=2.5 * WAVELENGTH,
                          morph_limit=morph_frac * WAVELENGTH)


def tiny_geometry():
    """Single-layer 2x2 stack for scalar-oracle comparisons."""
    return build_geometry(wavelength=WAVELENGTH, num_users=2, layers=1, nx=2, nz=2,
                          layer_offsets=2.5 * WAVELENGTH,
                          morph_limit=0.5 * WAVELENGTH)


@pytest.fixture
def geom():
    return small_geometry()

@pytest.fixture
def scenario_config():
    return ScenarioConfig(noise_power=NOISE_W)


@pytest.fixture
def scenario(geom, scenario_config):
    return generate_scenario(geom, scenario_config, seed=7)


def random_state(geom, rng, p_total=P_MAX):
    from sfim.geometry import DesignState
    shape = (geom.layers, geom.n_elements)
    morph = rng.uniform(-geom.morph_limit, geom.morph_limit, size=shape)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=shape))
    p = rng.uniform(0.2, 1.0, size=geom.num_users)
    p *= np.sqrt(0.9 * p_total) / np.linalg.norm(p)
    return DesignState(morph=morph, phases=phases, power_amps=p)
