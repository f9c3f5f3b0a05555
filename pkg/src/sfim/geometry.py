"""Physical layout of the transmit array and the morphable metasurface stack.

Coordinate convention: the transmit antennas form a uniform linear array along
the z-axis with the first antenna at the origin.  Metasurface layers are
uniform planar grids parallel to the x-z plane, stacked along +y.  Each
meta-atom can be displaced ("morphed") along y within ``[-morph_limit,
+morph_limit]`` around its layer's rigid plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

#: Flexibility modes: every layer morphable / only the final layer / none.
MODES = ("sfim", "hsim", "rsim")


def normalize_mode(mode: str) -> str:
    m = str(mode).strip().lower()
    if m not in MODES:
        raise ValueError(f"unknown flexibility mode {mode!r}, expected one of {MODES}")
    return m


@dataclass(frozen=True)
class SystemGeometry:
    """Static layout constants.  All lengths in meters, areas in m^2.

    ``layer_offsets[l-1]`` is the axial gap between the rigid plane of layer
    ``l`` and the previous stage (the antenna array for ``l = 1``).  ``x_ref``
    and ``z_ref`` locate the grid's reference element relative to the first
    antenna.
    """

    wavelength: float
    num_users: int
    num_antennas: int
    layers: int
    nx: int
    nz: int
    antenna_spacing: float
    element_spacing_x: float
    element_spacing_z: float
    layer_offsets: tuple[float, ...]
    antenna_area: float
    element_area: float
    morph_limit: float
    x_ref: float
    z_ref: float

    def __post_init__(self):
        if self.num_users < 1 or self.layers < 1 or self.nx < 1 or self.nz < 1:
            raise ValueError("num_users, layers, nx, nz must all be >= 1")
        if self.num_antennas != self.num_users:
            # one antenna feeds one user stream; the cascade is square in (K, M)
            raise ValueError("num_antennas must equal num_users")
        for name in ("wavelength", "antenna_spacing", "element_spacing_x",
                     "element_spacing_z", "antenna_area", "element_area"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if len(self.layer_offsets) != self.layers:
            raise ValueError("need one layer offset per layer")
        if any(o <= 0 for o in self.layer_offsets):
            raise ValueError("layer offsets must be positive")
        if self.morph_limit < 0:
            raise ValueError("morph_limit must be nonnegative")
        if self.morph_limit >= min(self.layer_offsets) / 2.0:
            # morphed elements of adjacent stages must never touch or cross
            raise ValueError("morph_limit must be below half the smallest layer offset")

    @property
    def n_elements(self) -> int:
        return self.nx * self.nz

    def layer_plane(self, layer: int) -> float:
        """Absolute y-coordinate of the rigid plane of ``layer`` (1-based)."""
        return float(sum(self.layer_offsets[:layer]))


def build_geometry(*, wavelength: float | None = None,
                   carrier_frequency_hz: float | None = None,
                   num_users: int, layers: int, nx: int, nz: int,
                   layer_offsets, morph_limit: float,
                   num_antennas: int | None = None,
                   antenna_spacing: float | None = None,
                   element_spacing_x: float | None = None,
                   element_spacing_z: float | None = None,
                   antenna_area: float | None = None,
                   element_area: float | None = None,
                   x_ref: float | None = None,
                   z_ref: float | None = None) -> SystemGeometry:
    """Construct a :class:`SystemGeometry`, filling standard defaults.

    Defaults: half-wavelength spacings, quarter-wavelength-squared element
    areas, and grid reference offsets that center each layer on the antenna
    array boresight.
    """
    if wavelength is None:
        if carrier_frequency_hz is None:
            raise ValueError("either wavelength or carrier_frequency_hz is required")
        wavelength = SPEED_OF_LIGHT / carrier_frequency_hz
    lam = float(wavelength)
    if np.isscalar(layer_offsets):
        layer_offsets = (float(layer_offsets),) * layers
    else:
        layer_offsets = tuple(float(v) for v in layer_offsets)
        if len(layer_offsets) == 1:
            layer_offsets = layer_offsets * layers
    num_antennas = num_users if num_antennas is None else num_antennas
    c_a = lam / 2.0 if antenna_spacing is None else float(antenna_spacing)
    c_x = lam / 2.0 if element_spacing_x is None else float(element_spacing_x)
    c_z = lam / 2.0 if element_spacing_z is None else float(element_spacing_z)
    if x_ref is None:
        x_ref = -c_x * (nx - 1) / 2.0
    if z_ref is None:
        z_ref = -c_z * (nz - 1) / 2.0 + c_a * (num_antennas - 1) / 2.0
    return SystemGeometry(
        wavelength=lam,
        num_users=int(num_users),
        num_antennas=int(num_antennas),
        layers=int(layers),
        nx=int(nx),
        nz=int(nz),
        antenna_spacing=c_a,
        element_spacing_x=c_x,
        element_spacing_z=c_z,
        layer_offsets=layer_offsets,
        antenna_area=lam * lam / 4.0 if antenna_area is None else float(antenna_area),
        element_area=lam * lam / 4.0 if element_area is None else float(element_area),
        morph_limit=float(morph_limit),
        x_ref=float(x_ref),
        z_ref=float(z_ref),
    )


def element_position(geometry: SystemGeometry, layer: int, index: int,
                     morph: float = 0.0) -> np.ndarray:
    """3-D position of one antenna (``layer = 0``) or meta-atom (``layer >= 1``).

    Indices are 0-based.  The y-coordinate accumulates the offsets of all
    layers up to ``layer`` plus the element's own morph.
    """
    if not 0 <= layer <= geometry.layers:
        raise ValueError(f"layer {layer} out of range 0..{geometry.layers}")
    if layer == 0:
        if not 0 <= index < geometry.num_antennas:
            raise ValueError(f"antenna index {index} out of range")
        if morph != 0.0:
            raise ValueError("transmit antennas do not morph")
        return np.array([0.0, 0.0, index * geometry.antenna_spacing])
    if not 0 <= index < geometry.n_elements:
        raise ValueError(f"element index {index} out of range")
    if abs(morph) > geometry.morph_limit:
        raise ValueError("morph value exceeds the morphing range")
    x = geometry.x_ref + geometry.element_spacing_x * (index % geometry.nx)
    z = geometry.z_ref + geometry.element_spacing_z * (index // geometry.nx)
    return np.array([x, geometry.layer_plane(layer) + morph, z])


def grid_lateral_coords(geometry: SystemGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Lateral (x, z) coordinates of the N grid elements, shared by all layers."""
    n = np.arange(geometry.n_elements)
    x = geometry.x_ref + geometry.element_spacing_x * (n % geometry.nx)
    z = geometry.z_ref + geometry.element_spacing_z * (n // geometry.nx)
    return x, z


@dataclass(frozen=True)
class ScenarioConfig:
    """Sampling distributions for random user scenarios.

    Distances in meters, angles in radians, ``noise_power`` in watts.  The
    line-of-sight departure angles are drawn from ``user_aod``, scattered-path
    angles from ``scatterer_aod``; scattered-path gains are complex Gaussian
    with power split evenly between the non-LoS paths.
    """

    noise_power: float
    num_paths: int = 6
    pathloss_exponent: float = 3.5
    user_distance: tuple[float, float] = (95.0, 105.0)
    user_aod: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    scatterer_distance: tuple[float, float] = (50.0, 105.0)
    scatterer_aod: tuple[float, float] = (-math.pi / 2, -math.pi / 4)

    def __post_init__(self):
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if self.num_paths < 1:
            raise ValueError("need at least the line-of-sight path")


@dataclass(frozen=True, eq=False)
class UserChannelParams:
    """Multipath description of one user's channel from the final layer.

    Index 0 is the line-of-sight path; the rest are scattered paths.
    """

    path_gains: np.ndarray
    azimuth_aod: np.ndarray
    elevation_aod: np.ndarray
    noise_power: float

    def __post_init__(self):
        object.__setattr__(self, "path_gains", np.asarray(self.path_gains, dtype=complex))
        object.__setattr__(self, "azimuth_aod", np.asarray(self.azimuth_aod, dtype=float))
        object.__setattr__(self, "elevation_aod", np.asarray(self.elevation_aod, dtype=float))
        if self.path_gains.ndim != 1 or len(self.path_gains) < 1:
            raise ValueError("need at least one path")
        if self.azimuth_aod.shape != self.path_gains.shape \
                or self.elevation_aod.shape != self.path_gains.shape:
            raise ValueError("per-path arrays must have identical length")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        for arr in (self.path_gains, self.azimuth_aod, self.elevation_aod):
            arr.setflags(write=False)

    @property
    def path_count(self) -> int:
        return len(self.path_gains)


def sample_path_gains(rng: np.random.Generator, wavelength: float,
                      los_distance: float, scatterer_distances: np.ndarray,
                      pathloss_exponent: float) -> np.ndarray:
    """Geometric multipath gain model, isolated so it can be swapped.

    Log-distance power gain ``(lam / 4 pi)**2 * d**(-gamma)`` with the
    free-space reference at 1 m.  LoS gain: deterministic magnitude with a
    uniform random phase.  Scattered gains: circularly-symmetric complex
    Gaussian with the per-path variance split evenly across scatterers.
    """
    gamma = pathloss_exponent
    ref = wavelength / (4.0 * math.pi)
    chi = rng.uniform(0.0, 2.0 * math.pi)
    los = ref * math.sqrt(los_distance ** (-gamma)) * np.exp(1j * chi)
    n_nlos = len(scatterer_distances)
    if n_nlos == 0:
        return np.array([los])
    var = ref * ref * scatterer_distances ** (-gamma) / n_nlos
    nlos = np.sqrt(var / 2.0) * (rng.standard_normal(n_nlos)
                                 + 1j * rng.standard_normal(n_nlos))
    return np.concatenate(([los], nlos))


def generate_scenario(geometry: SystemGeometry, config: ScenarioConfig,
                      seed: int) -> tuple[UserChannelParams, ...]:
    """Draw one random multi-user scenario; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    users = []
    for _ in range(geometry.num_users):
        d_user = rng.uniform(*config.user_distance)
        az0 = rng.uniform(*config.user_aod)
        el0 = rng.uniform(*config.user_aod)
        n_nlos = config.num_paths - 1
        d_scat = rng.uniform(*config.scatterer_distance, size=n_nlos)
        az_scat = rng.uniform(*config.scatterer_aod, size=n_nlos)
        el_scat = rng.uniform(*config.scatterer_aod, size=n_nlos)
        gains = sample_path_gains(rng, geometry.wavelength, d_user, d_scat,
                                  config.pathloss_exponent)
        users.append(UserChannelParams(
            path_gains=gains,
            azimuth_aod=np.concatenate(([az0], az_scat)),
            elevation_aod=np.concatenate(([el0], el_scat)),
            noise_power=config.noise_power,
        ))
    return tuple(users)


@dataclass(frozen=True, eq=False)
class DesignState:
    """The three optimization blocks: morphs (L, N), meta-atom responses
    (L, N) and per-user power amplitudes (K,), with ``power_amps[k]**2`` the
    power allocated to user k."""

    morph: np.ndarray
    phases: np.ndarray
    power_amps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "morph", np.array(self.morph, dtype=float))
        object.__setattr__(self, "phases", np.array(self.phases, dtype=complex))
        object.__setattr__(self, "power_amps", np.array(self.power_amps, dtype=float))
        if self.morph.ndim != 2 or self.phases.shape != self.morph.shape:
            raise ValueError("morph and phases must both have shape (layers, elements)")
        if self.power_amps.ndim != 1:
            raise ValueError("power_amps must be a flat per-user vector")
        for arr in (self.morph, self.phases, self.power_amps):
            arr.setflags(write=False)

    @property
    def layers(self) -> int:
        return self.morph.shape[0]


def initial_state(geometry: SystemGeometry, mode: str, seed: int,
                  p_max: float) -> DesignState:
    """Rigid start: zero morphs, uniform random responses, full power budget
    split evenly.  The mode does not affect the draw, so shared seeds give
    identical initializations across modes."""
    normalize_mode(mode)
    if p_max <= 0:
        raise ValueError("p_max must be positive")
    rng = np.random.default_rng(seed)
    shape = (geometry.layers, geometry.n_elements)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=shape)
    return DesignState(
        morph=np.zeros(shape),
        phases=np.exp(1j * theta),
        power_amps=np.full(geometry.num_users,
                           math.sqrt(p_max / geometry.num_users)),
    )
