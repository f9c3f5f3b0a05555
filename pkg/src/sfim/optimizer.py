"""Alternating projected-gradient ascent over morphs, power and responses.

Each outer iteration updates the three blocks in a fixed order; every block
step is a gradient move followed by the block's feasibility projection, and
(by default) an Armijo backtracking loop that halves the step until the
projected update improves the sum rate, so the recorded trace is
non-decreasing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel, gradients
from .geometry import (DesignState, SystemGeometry, initial_state, normalize_mode)
from .objective import check_feasibility, rates_from_signal_powers

#: Halvings allowed before a block step is skipped for the iteration.
MAX_BACKTRACKS = 40


class NumericalAbort(RuntimeError):
    """Raised when a gradient turns non-finite; the run cannot continue."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Step sizes, stopping rule and flexibility mode.

    Step sizes left as ``None`` resolve at run time to ``1e-4 * wavelength``
    (morph), ``1e-2 * sqrt(p_max)`` (power) and ``0.1`` (response), so sweeps
    that change the budget or geometry keep sensibly scaled defaults.
    ``power_projection`` selects between the sequential clip/cap rule and the
    exact Euclidean projection onto the nonnegative orthant and power ball.
    """

    p_max: float
    mode: str = "sfim"
    step_morph: float | None = None
    step_power: float | None = None
    step_phase: float | None = None
    tolerance: float = 1e-4
    max_iters: int = 150
    line_search: str = "backtracking"
    backtrack_beta: float = 0.5
    backtrack_c1: float = 1e-4
    power_projection: str = "sequential"
    block_order: tuple[str, ...] = ("morph", "power", "phase")

    def __post_init__(self):
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        for name in ("step_morph", "step_power", "step_phase"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.line_search not in ("backtracking", "off"):
            raise ValueError("line_search must be 'backtracking' or 'off'")
        if not 0 < self.backtrack_beta < 1:
            raise ValueError("backtrack_beta must lie in (0, 1)")
        if self.power_projection not in ("sequential", "exact"):
            raise ValueError("power_projection must be 'sequential' or 'exact'")
        if sorted(self.block_order) != sorted(gradients.BLOCKS):
            raise ValueError("block_order must be a permutation of morph/power/phase")

    def resolved_step(self, block: str, geometry: SystemGeometry) -> float:
        value = getattr(self, f"step_{block}")
        if value is not None:
            return value
        if block == "morph":
            return 1e-4 * geometry.wavelength
        if block == "power":
            return 1e-2 * float(np.sqrt(self.p_max))
        return 0.1


@dataclass
class Trace:
    """Per-iteration record of the optimization run."""

    iters: list = field(default_factory=list)
    sum_rates: list = field(default_factory=list)
    steps_taken: dict = field(default_factory=lambda: {b: [] for b in gradients.BLOCKS})
    feasible: list = field(default_factory=list)

    def append(self, t: int, sum_rate: float, taken: dict, feasible: bool):
        self.iters.append(t)
        self.sum_rates.append(sum_rate)
        for block in gradients.BLOCKS:
            self.steps_taken[block].append(taken[block])
        self.feasible.append(feasible)

    def __len__(self) -> int:
        return len(self.iters)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "sum_rate", "step_morph_taken",
                             "step_power_taken", "step_phase_taken", "feasible"])
            for i in range(len(self.iters)):
                writer.writerow([self.iters[i], repr(self.sum_rates[i]),
                                 repr(self.steps_taken["morph"][i]),
                                 repr(self.steps_taken["power"][i]),
                                 repr(self.steps_taken["phase"][i]),
                                 int(self.feasible[i])])


def project_morph(morph: np.ndarray, limit: float) -> np.ndarray:
    """Clamp every morph into the closed interval [-limit, +limit]."""
    return np.clip(morph, -limit, limit)


def project_power(p: np.ndarray, p_max: float, rule: str = "sequential") -> np.ndarray:
    """Map an amplitude vector into the feasible power set.

    ``sequential`` applies two rules in order: clip negatives, then cap every
    entry at ``sqrt(p_max) / ||p||``.  The elementwise cap alone can leave the
    total power above the budget (near-equal sub-unit entries), so a final
    rescale onto the ball runs whenever the result still violates it; the
    rescale is a no-op in every case the two rules already handle.  ``exact``
    is the Euclidean projection: clip, then rescale onto the ball.
    """
    out = np.maximum(p, 0.0)
    norm = float(np.linalg.norm(out))
    if norm == 0.0:
        return out
    root_budget = float(np.sqrt(p_max))
    if rule == "exact":
        return out if norm <= root_budget else out * (root_budget / norm)
    out = np.minimum(out, root_budget / norm)
    norm = float(np.linalg.norm(out))
    if norm > root_budget:
        out = out * (root_budget / norm)
    return out


def project_phase(phases: np.ndarray) -> np.ndarray:
    """Normalize each response to unit modulus; exact zeros map to 1."""
    mag = np.abs(phases)
    return np.where(mag > 0.0, phases / np.where(mag > 0.0, mag, 1.0), 1.0 + 0.0j)


def mask_morph_gradient(d_morph: np.ndarray, layers: int, mode: str) -> np.ndarray:
    """Zero the gradient of layers held rigid by the flexibility mode."""
    grad = d_morph.reshape(layers, -1).copy()
    mode = normalize_mode(mode)
    if mode == "rsim":
        grad[:] = 0.0
    elif mode == "hsim":
        grad[:-1] = 0.0
    return grad.ravel()


def _sum_rate_fast(geometry, scenario, state, block, stack):
    """Sum rate of a trial state, rebuilding only what the block touched.

    Returns the rate and a channel stack valid for the trial state."""
    if block == "power" and stack is not None:
        new_stack = stack
    elif block == "phase" and stack is not None:
        g = channel.build_cascade(state.phases, stack.user_channels,
                                  list(stack.interlayer))
        new_stack = channel.ChannelStack(interlayer=stack.interlayer,
                                         user_channels=stack.user_channels,
                                         cascaded=g)
    else:
        new_stack = channel.build_stack(geometry, state, scenario)
    J = (state.power_amps[None, :] ** 2) * np.abs(new_stack.cascaded) ** 2
    noise = np.array([params.noise_power for params in scenario])
    _, rates = rates_from_signal_powers(J, noise)
    return float(rates.sum()), new_stack


def _apply_block(state: DesignState, block: str, direction, step: float,
                 geometry: SystemGeometry, config: OptimizerConfig) -> DesignState:
    if block == "morph":
        morph = project_morph(state.morph + step * direction.reshape(state.morph.shape),
                              geometry.morph_limit)
        return replace(state, morph=morph)
    if block == "power":
        p = project_power(state.power_amps + step * direction, config.p_max,
                          config.power_projection)
        return replace(state, power_amps=p)
    phases = project_phase(state.phases
                           + step * direction.reshape(state.phases.shape))
    return replace(state, phases=phases)


def step_block(geometry: SystemGeometry, scenario, state: DesignState, block: str,
               gradient: np.ndarray, config: OptimizerConfig, *,
               current_rate: float | None = None, stack=None):
    """One projected-gradient update of a single block.

    Returns ``(new_state, step_taken, new_rate, new_stack)``.  The response
    gradient is normalized elementwise to unit modulus before scaling (zero
    entries do not move).  With backtracking, the step is halved until the
    projected update satisfies the sufficient-increase test or the block is
    skipped for this iteration.
    """
    if block not in gradients.BLOCKS:
        raise ValueError(f"unknown block {block!r}")
    if not np.all(np.isfinite(gradient.view(float))):
        raise NumericalAbort(f"non-finite {block} gradient")
    if block == "morph":
        gradient = mask_morph_gradient(gradient, geometry.layers, config.mode)
    gnorm_sq = float(np.sum(np.abs(gradient) ** 2))
    if gnorm_sq == 0.0:
        if current_rate is None or stack is None:
            current_rate, stack = _sum_rate_fast(geometry, scenario, state, None, None)
        return state, 0.0, current_rate, stack

    if block == "phase":
        mag = np.abs(gradient)
        direction = np.where(mag > 0.0, gradient / np.where(mag > 0.0, mag, 1.0), 0.0)
    else:
        direction = gradient

    step = config.resolved_step(block, geometry)
    if config.line_search == "off":
        new_state = _apply_block(state, block, direction, step, geometry, config)
        rate, new_stack = _sum_rate_fast(geometry, scenario, new_state, block, stack)
        return new_state, step, rate, new_stack

    if current_rate is None or stack is None:
        current_rate, stack = _sum_rate_fast(geometry, scenario, state, None, None)
    for _ in range(MAX_BACKTRACKS):
        trial = _apply_block(state, block, direction, step, geometry, config)
        rate, trial_stack = _sum_rate_fast(geometry, scenario, trial, block, stack)
        if rate >= current_rate + config.backtrack_c1 * step * gnorm_sq:
            return trial, step, rate, trial_stack
        step *= config.backtrack_beta
    return state, 0.0, current_rate, stack


def run_ao(geometry: SystemGeometry, scenario, config: OptimizerConfig,
           rng_seed: int):
    """Alternating optimization until the sum-rate change falls within
    tolerance or the iteration cap; returns the best feasible state seen and
    the per-iteration trace."""
    state = initial_state(geometry, config.mode, rng_seed, config.p_max)
    rate, stack = _sum_rate_fast(geometry, scenario, state, None, None)
    best_state, best_rate = state, rate
    trace = Trace()
    prev_rate = rate
    # layers whose morph gradient the mode can actually use; the rest are
    # masked to zero anyway, so their computation is skipped
    if config.mode == "rsim":
        morph_layers = ()
    elif config.mode == "hsim":
        morph_layers = (geometry.layers,)
    else:
        morph_layers = None
    for t in range(1, config.max_iters + 1):
        ws = gradients.CascadeWorkspace(geometry, state, scenario, stack=stack)
        taken = {b: 0.0 for b in gradients.BLOCKS}
        for block in config.block_order:
            if block == "morph":
                grad = gradients.grad_morph(geometry, state, scenario, ws,
                                            layers=morph_layers)
            elif block == "power":
                grad = gradients.grad_power(geometry, state, scenario, ws)
            else:
                grad = gradients.grad_phase(geometry, state, scenario, ws)
            state, taken[block], rate, stack = step_block(
                geometry, scenario, state, block, grad, config,
                current_rate=rate, stack=stack)
            if taken[block] != 0.0 and block != config.block_order[-1]:
                ws = gradients.CascadeWorkspace(geometry, state, scenario, stack=stack)
        feasible = not check_feasibility(geometry, state, config.p_max)
        trace.append(t, rate, taken, feasible)
        if feasible and rate > best_rate:
            best_state, best_rate = state, rate
        if abs(rate - prev_rate) <= config.tolerance:
            break
        prev_rate = rate
    return best_state, trace
