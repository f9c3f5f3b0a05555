"""Analytic sum-rate gradients for the three design blocks, a finite-difference
oracle, and the agreement suite that compares the two.

All three block gradients share the same rate-quotient structure: with
``A_k`` the total received power of user k plus noise and ``B_k`` the
interference power plus noise, every signal-power derivative dJ[k, i]
enters the sum-rate gradient with weight ``(1/ln 2) * (1/A_k - [i != k]/B_k)``.

Sparsity exploited for the morph block: moving element n of layer l changes
only row n of that layer's inbound propagation matrix and only column n of the
next hop's matrix, and the two per-entry derivatives differ only by sign
(the axial offset of a hop depends on the difference of the two layers'
morphs).  Prefix and suffix cascade products are computed once per state and
reused across all blocks, layers and user pairs.

The phase gradient is returned in the full real-gradient convention for a
real function of a complex vector: entry n is d/d Re(phi_n) + j d/d Im(phi_n),
so stepping the responses along it increases the sum rate to first order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import channel
from .channel import _rs_parts, axial_offsets, first_hop_lateral_sq, interlayer_lateral_sq
from .geometry import (DesignState, ScenarioConfig, SystemGeometry, build_geometry,
                       generate_scenario)
from .objective import LN2, evaluate, rates_from_signal_powers

BLOCKS = ("morph", "power", "phase")


@dataclass(frozen=True, eq=False)
class GradientBundle:
    """Flat gradients of the sum rate: morphs (L*N, per meter), power
    amplitudes (K,), responses (L*N, complex).  Layer-major ordering matches
    ``DesignState`` arrays raveled in C order."""

    d_morph: np.ndarray
    d_power: np.ndarray
    d_phase: np.ndarray


class CascadeWorkspace:
    """Shared cascade intermediates for one (geometry, state, scenario).

    suffix[l] (K, cols of hop l) is the user-channel row multiplied down
    through hop l; suffix[L+1] is the raw user-channel matrix.  u[l] (N, K)
    is hop l's matrix applied to the prefix product, so that the prefix
    F[l] = phases_l * u[l]; F[0] holds the per-user transmit vectors diag(p).
    """

    def __init__(self, geometry: SystemGeometry, state: DesignState, scenario,
                 stack=None):
        L = geometry.layers
        self.geometry = geometry
        self.state = state
        self.scenario = scenario
        if stack is not None:
            # propagation matrices and user channels depend only on the morphs,
            # so a stack built at the same morph state can be reused
            self.omegas = list(stack.interlayer)
            self.h = stack.user_channels
        else:
            self.omegas = [channel.build_interlayer(geometry, state.morph, layer)
                           for layer in range(1, L + 1)]
            self.h = channel.build_user_matrix(geometry, scenario, state.morph[-1])

        self.suffix: list = [None] * (L + 2)
        self.suffix[L + 1] = self.h
        for layer in range(L, 0, -1):
            self.suffix[layer] = ((self.suffix[layer + 1]
                                   * state.phases[layer - 1][None, :])
                                  @ self.omegas[layer - 1])
        self.g = self.suffix[1]

        p = state.power_amps
        self.F: list = [None] * (L + 1)
        self.F[0] = np.diag(p).astype(complex)
        self.u: list = [None] * (L + 1)
        for layer in range(1, L + 1):
            self.u[layer] = self.omegas[layer - 1] @ self.F[layer - 1]
            self.F[layer] = state.phases[layer - 1][:, None] * self.u[layer]

        self.gp = self.g * p[None, :]
        self.J = np.abs(self.gp) ** 2
        self.noise = np.array([params.noise_power for params in scenario])
        sinr, rates = rates_from_signal_powers(self.J, self.noise)
        self.sum_rate = float(rates.sum())

        total = self.J.sum(axis=1) + self.noise
        interf = total - np.diagonal(self.J)
        K = geometry.num_users
        off_diag = 1.0 - np.eye(K)
        self.weights = (1.0 / total[:, None] - off_diag / interf[:, None]) / LN2


def interlayer_morph_derivative(geometry: SystemGeometry, morph: np.ndarray,
                                layer: int, omega: np.ndarray | None = None) -> np.ndarray:
    """Entrywise derivative of hop ``layer``'s propagation matrix with respect
    to the receiving element's morph (row n differentiates by morph n).

    Product rule over the three factors; the derivative with respect to the
    transmitting element's morph is the elementwise negative of this matrix.
    When the hop matrix itself is supplied, the derivative is evaluated as
    omega * (dw/w + dq/q + dr/r), which skips rebuilding the propagation
    phasor (the two forms are algebraically identical).
    """
    if layer == 1:
        rho = first_hop_lateral_sq(geometry)
        area = geometry.antenna_area
    else:
        rho = interlayer_lateral_sq(geometry)
        area = geometry.element_area
    lam = geometry.wavelength
    dy = axial_offsets(geometry, morph, layer)
    d_sq = rho + dy * dy
    d = np.sqrt(d_sq)
    if omega is None:
        w, q, r = _rs_parts(area, rho, dy, lam)
        dw = area * (rho - dy * dy) / d_sq ** 2
        dq = -dy / (2.0 * np.pi * d_sq * d)
        dr = 1j * (2.0 * np.pi / lam) * (dy / d) * r
        return dw * q * r + w * dq * r + w * q * dr
    q = 1.0 / (2.0 * np.pi * d) - 1j / lam
    dlog_w = (rho - dy * dy) / (dy * d_sq)
    dlog_q = (-dy / (2.0 * np.pi * d_sq * d)) / q
    dlog_r = 2j * np.pi * dy / (lam * d)
    return omega * (dlog_w + dlog_q + dlog_r)


def _morph_parts(ws: CascadeWorkspace, layers=None):
    """Per-layer morph-gradient split: ``upper[l]`` collects the sensitivity
    through the outbound side (next hop's matrix, or the user channel for the
    final layer), ``lower[l]`` through the inbound hop.  Their sum is the
    morph gradient; the split feeds the hop translation-cancellation test.

    ``layers`` restricts computation to a subset of (1-based) layers; other
    rows stay zero.  Hop-derivative matrices are built lazily per need.
    """
    geom, state = ws.geometry, ws.state
    L, N = geom.layers, geom.n_elements
    wanted = range(1, L + 1) if layers is None else sorted(set(layers))
    z_mats: dict = {}

    def z_mat(layer):
        if layer not in z_mats:
            z_mats[layer] = interlayer_morph_derivative(
                geom, state.morph, layer, omega=ws.omegas[layer - 1])
        return z_mats[layer]

    weights_conj_t = (ws.weights * np.conj(ws.gp)).T
    upper = np.zeros((L, N))
    lower = np.zeros((L, N))
    for layer in wanted:
        phi = state.phases[layer - 1]
        m1 = ws.u[layer] @ weights_conj_t
        zf = z_mat(layer) @ ws.F[layer - 1]
        m2 = zf @ weights_conj_t
        if layer < L:
            c = ws.suffix[layer + 2] * state.phases[layer][None, :]
            up = -(c @ z_mat(layer + 1))
        else:
            up = np.array([channel.user_channel_with_derivative(geom, params,
                                                                state.morph[-1])[1]
                           for params in ws.scenario])
        upper[layer - 1] = 2.0 * np.real(phi * np.sum(up.T * m1, axis=1))
        lower[layer - 1] = 2.0 * np.real(phi * np.sum(ws.suffix[layer + 1].T * m2,
                                                      axis=1))
    return upper, lower


def grad_morph(geometry: SystemGeometry, state: DesignState, scenario,
               workspace: CascadeWorkspace | None = None, layers=None) -> np.ndarray:
    """Sum-rate gradient with respect to every morph, flat (L*N,).

    ``layers`` optionally restricts computation to the given 1-based layers
    (entries of other layers are zero); the default computes every layer.
    """
    ws = workspace or CascadeWorkspace(geometry, state, scenario)
    upper, lower = _morph_parts(ws, layers=layers)
    return (upper + lower).ravel()


def grad_power(geometry: SystemGeometry, state: DesignState, scenario,
               workspace: CascadeWorkspace | None = None) -> np.ndarray:
    """Sum-rate gradient with respect to the power amplitudes (K,).

    Uses the diagonal-channel form: for each user k the received powers are
    ``|diag(g_k) p|^2`` with and without the own stream masked out.
    """
    ws = workspace or CascadeWorkspace(geometry, state, scenario)
    p = state.power_amps
    out = np.zeros_like(p)
    for k in range(geometry.num_users):
        gk2 = np.abs(ws.g[k]) ** 2
        masked = p.copy()
        masked[k] = 0.0
        denom_total = float(gk2 @ (p ** 2)) + ws.noise[k]
        denom_interf = float(gk2 @ (masked ** 2)) + ws.noise[k]
        out += gk2 * p / denom_total - gk2 * masked / denom_interf
    return (2.0 / LN2) * out


def grad_phase(geometry: SystemGeometry, state: DesignState, scenario,
               workspace: CascadeWorkspace | None = None) -> np.ndarray:
    """Sum-rate gradient with respect to the responses, flat complex (L*N,).

    For each layer the end-to-end channel is linear in that layer's response
    vector: g_k^T p_i = phi_l^T (suffix_{l+1} elementwise u_l).  Real and
    imaginary parts of the returned entries are the partial derivatives with
    respect to the response's real and imaginary parts.
    """
    ws = workspace or CascadeWorkspace(geometry, state, scenario)
    L, N = geometry.layers, geometry.n_elements
    weighted = ws.weights * ws.gp
    out = np.empty((L, N), dtype=complex)
    for layer in range(1, L + 1):
        b_next = ws.suffix[layer + 1]
        m = np.conj(ws.u[layer]) @ weighted.T
        out[layer - 1] = 2.0 * np.sum(np.conj(b_next).T * m, axis=1)
    return out.ravel()


def gradient_bundle(geometry: SystemGeometry, state: DesignState,
                    scenario) -> GradientBundle:
    """All three block gradients from one shared set of cascade products."""
    ws = CascadeWorkspace(geometry, state, scenario)
    return GradientBundle(
        d_morph=grad_morph(geometry, state, scenario, ws),
        d_power=grad_power(geometry, state, scenario, ws),
        d_phase=grad_phase(geometry, state, scenario, ws),
    )


def phase_tangent(d_phase: np.ndarray, phases_flat: np.ndarray) -> np.ndarray:
    """Project the complex response gradient onto the unit-circle tangent at
    each response: the derivative of the sum rate per radian of rotation."""
    return np.real(np.conj(d_phase) * (1j * phases_flat))


def fd_gradient(block: str, geometry: SystemGeometry, state: DesignState,
                scenario, step: float) -> np.ndarray:
    """Central finite differences of the sum rate for one block.

    Responses are perturbed along the unit-circle tangent (rotation by
    ``+-step`` radians), so the phase result compares against
    :func:`phase_tangent` of the analytic gradient.
    """
    if block not in BLOCKS:
        raise ValueError(f"unknown block {block!r}")
    if step <= 0:
        raise ValueError("step must be positive")

    def rate(st):
        return evaluate(geometry, st, scenario).sum_rate

    if block == "morph":
        out = np.zeros(state.morph.shape)
        for idx in np.ndindex(*state.morph.shape):
            plus = state.morph.copy()
            minus = state.morph.copy()
            plus[idx] += step
            minus[idx] -= step
            out[idx] = (rate(replace(state, morph=plus))
                        - rate(replace(state, morph=minus))) / (2.0 * step)
        return out.ravel()
    if block == "power":
        out = np.zeros(state.power_amps.shape)
        for k in range(len(out)):
            plus = state.power_amps.copy()
            minus = state.power_amps.copy()
            plus[k] += step
            minus[k] -= step
            out[k] = (rate(replace(state, power_amps=plus))
                      - rate(replace(state, power_amps=minus))) / (2.0 * step)
        return out
    out = np.zeros(state.phases.shape)
    for idx in np.ndindex(*state.phases.shape):
        plus = state.phases.copy()
        minus = state.phases.copy()
        plus[idx] *= np.exp(1j * step)
        minus[idx] *= np.exp(-1j * step)
        out[idx] = (rate(replace(state, phases=plus))
                    - rate(replace(state, phases=minus))) / (2.0 * step)
    return out.ravel()


# --- agreement suite -------------------------------------------------------

DEFAULT_THRESHOLDS = {"morph": 1e-5, "power": 1e-5, "phase": 1e-4}


@dataclass(frozen=True)
class GradientCheckResult:
    block: str
    seed: int
    rel_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.threshold


def check_instance_geometry(wavelength: float = 0.0107068735) -> SystemGeometry:
    """Small stack used by the agreement suite: 3 layers of 3x3 elements
    serving 2 users."""
    return build_geometry(wavelength=wavelength, num_users=2, layers=3,
                          nx=3, nz=3, layer_offsets=2.5 * wavelength,
                          morph_limit=0.5 * wavelength)


def random_feasible_state(geometry: SystemGeometry, p_max: float,
                          rng: np.random.Generator) -> DesignState:
    """Uniform morphs in range, uniform random responses, positive power
    amplitudes scaled strictly inside the budget."""
    shape = (geometry.layers, geometry.n_elements)
    morph = rng.uniform(-geometry.morph_limit, geometry.morph_limit, size=shape)
    phases = np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, size=shape))
    p = rng.uniform(0.2, 1.0, size=geometry.num_users)
    p *= math.sqrt(0.9 * p_max) / np.linalg.norm(p)
    return DesignState(morph=morph, phases=phases, power_amps=p)


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm deviation normalized by the numeric gradient's scale."""
    scale = float(np.max(np.abs(numeric)))
    if scale == 0.0:
        return float(np.max(np.abs(analytic)))
    return float(np.max(np.abs(analytic - numeric)) / scale)


def run_gradient_checks(blocks=None, n_instances: int = 20, seed0: int = 0,
                        geometry: SystemGeometry | None = None,
                        scenario_config: ScenarioConfig | None = None,
                        p_max: float = 0.31622776601683794,
                        thresholds: dict | None = None) -> list[GradientCheckResult]:
    """Compare analytic and finite-difference gradients on random feasible
    states, one result row per (block, instance seed)."""
    blocks = list(BLOCKS) if blocks is None else [b for b in BLOCKS if b in blocks]
    geom = geometry or check_instance_geometry()
    cfg = scenario_config or ScenarioConfig(noise_power=3.9810717055349695e-14)
    thresholds = {**DEFAULT_THRESHOLDS, **(thresholds or {})}
    # steps balance truncation against round-off of the rate evaluation
    steps = {
        "morph": 1e-5 * geom.wavelength,
        "power": 1e-4 * math.sqrt(p_max),
        "phase": 3e-5,
    }
    results = []
    for seed in range(seed0, seed0 + n_instances):
        scenario = generate_scenario(geom, cfg, seed)
        state = random_feasible_state(geom, p_max, np.random.default_rng(seed + 10_000))
        ws = CascadeWorkspace(geom, state, scenario)
        for block in blocks:
            if block == "morph":
                analytic = grad_morph(geom, state, scenario, ws)
            elif block == "power":
                analytic = grad_power(geom, state, scenario, ws)
            else:
                analytic = phase_tangent(grad_phase(geom, state, scenario, ws),
                                         state.phases.ravel())
            numeric = fd_gradient(block, geom, state, scenario, steps[block])
            results.append(GradientCheckResult(
                block=block, seed=seed,
                rel_error=relative_gradient_error(analytic, numeric),
                threshold=thresholds[block]))
    return results
