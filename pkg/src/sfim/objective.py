"""Per-user SINR, rates and sum rate, plus design-constraint checking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .channel import build_stack
from .geometry import DesignState, SystemGeometry

LN2 = math.log(2.0)

#: Constraint identifiers reported by :func:`check_feasibility`.
POWER_BUDGET = "power_budget"
POWER_SIGN = "power_sign"
UNIT_MODULUS = "unit_modulus"
MORPH_RANGE = "morph_range"

UNIT_MODULUS_TOL = 1e-9
BUDGET_REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class RateReport:
    """Signal powers J[k, i] = |g_k^T p_i|^2 (watts), per-user SINR and rate
    (bps/Hz), and their sum.  ``feasible`` flags whether the evaluated state
    satisfied every design constraint."""

    J: np.ndarray
    sinr: np.ndarray
    rates: np.ndarray
    sum_rate: float
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "J": self.J.tolist(),
            "sinr": self.sinr.tolist(),
            "rates": self.rates.tolist(),
            "sum_rate": self.sum_rate,
            "feasible": self.feasible,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def check_feasibility(geometry: SystemGeometry, state: DesignState,
                      p_max: float) -> list[str]:
    """Names of violated design constraints; an empty list means feasible.

    Morph range and power sign are closed-interval checks; the power budget
    allows 1e-12 relative slack and unit modulus 1e-9 absolute slack for
    projection round-off.
    """
    violations = []
    total = float(np.sum(state.power_amps ** 2))
    if total > p_max * (1.0 + BUDGET_REL_TOL):
        violations.append(POWER_BUDGET)
    if np.any(state.power_amps < 0.0):
        violations.append(POWER_SIGN)
    if np.any(np.abs(np.abs(state.phases) - 1.0) > UNIT_MODULUS_TOL):
        violations.append(UNIT_MODULUS)
    if np.any(np.abs(state.morph) > geometry.morph_limit):
        violations.append(MORPH_RANGE)
    return violations


def rates_from_signal_powers(J: np.ndarray, noise: np.ndarray):
    """SINR and rates from the (K, K) signal-power matrix.

    The rate is computed as a difference of natural logs scaled by 1/ln 2,
    which shares its quotient structure with the analytic gradients.
    """
    total = J.sum(axis=1)
    own = np.diagonal(J)
    interference = total - own
    sinr = own / (interference + noise)
    rates = (np.log(total + noise) - np.log(interference + noise)) / LN2
    return sinr, rates


def evaluate(geometry: SystemGeometry, state: DesignState, scenario,
             p_max: float | None = None) -> RateReport:
    """Full rate report for one design state.

    Infeasible states are evaluated anyway (useful for finite-difference
    probes) and merely flagged; dimension mismatches raise.
    """
    if len(state.power_amps) != geometry.num_users:
        raise ValueError("power vector does not match the user count")
    stack = build_stack(geometry, state, scenario)
    J = (state.power_amps[None, :] ** 2) * np.abs(stack.cascaded) ** 2
    noise = np.array([params.noise_power for params in scenario])
    sinr, rates = rates_from_signal_powers(J, noise)
    violations = check_feasibility(geometry, state, p_max if p_max is not None else np.inf)
    return RateReport(J=J, sinr=sinr, rates=rates,
                      sum_rate=float(rates.sum()), feasible=not violations)


def sum_rate(geometry: SystemGeometry, state: DesignState, scenario) -> float:
    return evaluate(geometry, state, scenario).sum_rate
