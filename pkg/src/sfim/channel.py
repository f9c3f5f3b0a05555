"""Morph-dependent channel construction.

Propagation between consecutive stages follows the Rayleigh-Sommerfeld
diffraction coefficient between two small elements at distance ``d`` and
incidence angle ``theta`` off the stack axis::

    entry = (A * cos(theta) / d) * (1 / (2*pi*d) - j / lam) * exp(j*2*pi*d/lam)

Every pairwise entry is parameterized by the squared lateral separation
``rho`` (morph-independent, cached per geometry) and the axial offset
``dy`` (morph-dependent), with ``d = sqrt(rho + dy**2)`` and
``cos(theta) = dy / d``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import DesignState, SystemGeometry, UserChannelParams, grid_lateral_coords


def _rs_parts(area, lateral_sq, axial_offset, wavelength):
    """The three factors of the propagation coefficient: the real obliquity /
    spreading weight ``w``, the complex near-field factor ``q`` and the
    propagation phasor ``r``."""
    rho = np.asarray(lateral_sq, dtype=float)
    dy = np.asarray(axial_offset, dtype=float)
    d_sq = rho + dy * dy
    d = np.sqrt(d_sq)
    w = area * dy / d_sq
    q = 1.0 / (2.0 * np.pi * d) - 1j / wavelength
    r = np.exp(2j * np.pi * d / wavelength)
    return w, q, r


def rs_entry(area: float, lateral_sq, axial_offset, wavelength: float):
    """Rayleigh-Sommerfeld coefficient; accepts scalars or broadcastable arrays.

    The receiver must sit strictly in front of the transmitter along +y
    (``axial_offset > 0``); violating that means the stack geometry itself is
    broken, so it raises rather than returning a value.
    """
    if np.any(np.asarray(axial_offset) <= 0):
        raise ValueError("axial offset must be positive (receiver in front of transmitter)")
    if np.any(np.asarray(lateral_sq) < 0):
        raise ValueError("squared lateral separation cannot be negative")
    w, q, r = _rs_parts(area, lateral_sq, axial_offset, wavelength)
    return w * q * r


@lru_cache(maxsize=32)
def first_hop_lateral_sq(geometry: SystemGeometry) -> np.ndarray:
    """(N, M) squared lateral separations between grid elements and antennas."""
    x, z = grid_lateral_coords(geometry)
    z_ant = np.arange(geometry.num_antennas) * geometry.antenna_spacing
    rho = x[:, None] ** 2 + (z[:, None] - z_ant[None, :]) ** 2
    rho.setflags(write=False)
    return rho


@lru_cache(maxsize=32)
def interlayer_lateral_sq(geometry: SystemGeometry) -> np.ndarray:
    """(N, N) squared lateral separations between two aligned grid layers."""
    x, z = grid_lateral_coords(geometry)
    rho = (x[:, None] - x[None, :]) ** 2 + (z[:, None] - z[None, :]) ** 2
    rho.setflags(write=False)
    return rho


def axial_offsets(geometry: SystemGeometry, morph: np.ndarray, layer: int) -> np.ndarray:
    """Axial transmitter-to-receiver offsets for one hop.

    For the first hop the antennas are fixed, so the offset depends only on
    the receiving element; deeper hops see the difference of the two layers'
    morphs.  Broadcasts against the (N, M)-shaped lateral cache.
    """
    gap = geometry.layer_offsets[layer - 1]
    if layer == 1:
        return (gap + morph[0])[:, None]
    return gap + morph[layer - 1][:, None] - morph[layer - 2][None, :]


def build_interlayer(geometry: SystemGeometry, morph: np.ndarray, layer: int) -> np.ndarray:
    """Propagation matrix of hop ``layer`` (1-based): (N, M) for the first
    hop, (N, N) for the rest."""
    if not 1 <= layer <= geometry.layers:
        raise ValueError(f"layer {layer} out of range 1..{geometry.layers}")
    if layer == 1:
        rho = first_hop_lateral_sq(geometry)
        area = geometry.antenna_area
    else:
        rho = interlayer_lateral_sq(geometry)
        area = geometry.element_area
    return rs_entry(area, rho, axial_offsets(geometry, morph, layer), geometry.wavelength)


@lru_cache(maxsize=32)
def _grid_indices(geometry: SystemGeometry):
    idx = np.arange(geometry.n_elements)
    x_idx = (idx % geometry.nx).astype(float)
    z_idx = (idx // geometry.nx).astype(float)
    x_idx.setflags(write=False)
    z_idx.setflags(write=False)
    return x_idx, z_idx


def steering_element(geometry: SystemGeometry, u: int, morph_u: float,
                     azimuth: float, elevation: float) -> complex:
    """Unit-modulus response of grid element ``u`` (0-based) toward a departure
    direction, including the element's own morph along the stack axis."""
    if not 0 <= u < geometry.n_elements:
        raise ValueError(f"element index {u} out of range")
    psi = (geometry.element_spacing_x * (u % geometry.nx)
           * np.cos(azimuth) * np.sin(elevation)
           + geometry.element_spacing_z * (u // geometry.nx) * np.cos(elevation))
    phase = 2.0 * np.pi / geometry.wavelength \
        * (psi + morph_u * np.sin(azimuth) * np.sin(elevation))
    return complex(np.exp(1j * phase))


def steering_vector(geometry: SystemGeometry, morph_last: np.ndarray,
                    azimuth: float, elevation: float) -> np.ndarray:
    """(N,) steering vector of the final layer, vectorized over elements."""
    x_idx, z_idx = _grid_indices(geometry)
    psi = (geometry.element_spacing_x * x_idx * np.cos(azimuth) * np.sin(elevation)
           + geometry.element_spacing_z * z_idx * np.cos(elevation))
    phase = 2.0 * np.pi / geometry.wavelength \
        * (psi + morph_last * np.sin(azimuth) * np.sin(elevation))
    return np.exp(1j * phase)


@lru_cache(maxsize=512)
def _steering_basis(geometry: SystemGeometry, params: UserChannelParams):
    """Per-path zero-morph steering rows (I, N) and morph-phase slopes (I,).

    Both depend only on the departure angles, so they are cached per user;
    the morph-dependent factor is a single elementwise exponential on top.
    """
    x_idx, z_idx = _grid_indices(geometry)
    az = params.azimuth_aod[:, None]
    el = params.elevation_aod[:, None]
    psi = (geometry.element_spacing_x * x_idx[None, :] * np.cos(az) * np.sin(el)
           + geometry.element_spacing_z * z_idx[None, :] * np.cos(el))
    base = np.exp(2j * np.pi / geometry.wavelength * psi)
    slope = np.sin(params.azimuth_aod) * np.sin(params.elevation_aod)
    base.setflags(write=False)
    slope.setflags(write=False)
    return base, slope


def user_channel_with_derivative(geometry: SystemGeometry, params: UserChannelParams,
                                 morph_last: np.ndarray):
    """User channel and its elementwise own-morph derivative, shared per-path
    intermediates (only entry n of h depends on morph n)."""
    base, slope = _steering_basis(geometry, params)
    k0 = 2.0 * np.pi / geometry.wavelength
    paths = params.path_gains[:, None] * base \
        * np.exp(1j * k0 * slope[:, None] * morph_last[None, :])
    h = paths.sum(axis=0)
    dh = (1j * k0) * (slope[:, None] * paths).sum(axis=0)
    return h, dh


def build_user_channel(geometry: SystemGeometry, params: UserChannelParams,
                       morph_last: np.ndarray) -> np.ndarray:
    """Multipath channel from the final layer to one user: gain-weighted sum
    of per-path steering vectors over the final layer's morphs."""
    return user_channel_with_derivative(geometry, params, morph_last)[0]


def user_channel_morph_derivative(geometry: SystemGeometry, params: UserChannelParams,
                                  morph_last: np.ndarray) -> np.ndarray:
    """Elementwise derivative of the user channel with respect to each final
    layer element's own morph."""
    return user_channel_with_derivative(geometry, params, morph_last)[1]


def build_user_matrix(geometry: SystemGeometry, scenario, morph_last: np.ndarray) -> np.ndarray:
    """(K, N) stack of user channels."""
    return np.array([build_user_channel(geometry, params, morph_last)
                     for params in scenario])


def build_cascade(phases: np.ndarray, user_channels: np.ndarray,
                  interlayer: list[np.ndarray]) -> np.ndarray:
    """End-to-end channels, rows g_k of shape (K, M).

    Evaluates right-to-left as vector-matrix products starting from each
    user channel row, so the full N-by-N matrix chain is never materialized.
    """
    g = user_channels
    for layer in range(len(interlayer), 0, -1):
        g = (g * phases[layer - 1][None, :]) @ interlayer[layer - 1]
    return g


@dataclass(frozen=True, eq=False)
class ChannelStack:
    """Materialized channel objects for one (geometry, state, scenario)."""

    interlayer: tuple[np.ndarray, ...]
    user_channels: np.ndarray
    cascaded: np.ndarray


def build_stack(geometry: SystemGeometry, state: DesignState, scenario) -> ChannelStack:
    if state.morph.shape != (geometry.layers, geometry.n_elements):
        raise ValueError("state does not match geometry (layers, elements)")
    if len(scenario) != geometry.num_users:
        raise ValueError("scenario does not match geometry user count")
    omegas = tuple(build_interlayer(geometry, state.morph, layer)
                   for layer in range(1, geometry.layers + 1))
    h = build_user_matrix(geometry, scenario, state.morph[-1])
    g = build_cascade(state.phases, h, list(omegas))
    return ChannelStack(interlayer=omegas, user_channels=h, cascaded=g)


def dump_complex_csv(array: np.ndarray, path) -> None:
    """Write a complex matrix or vector as (row, col, re, im) rows."""
    arr = np.atleast_2d(np.asarray(array))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "re", "im"])
        for r in range(arr.shape[0]):
            for c in range(arr.shape[1]):
                v = complex(arr[r, c])
                writer.writerow([r, c, repr(v.real), repr(v.imag)])
