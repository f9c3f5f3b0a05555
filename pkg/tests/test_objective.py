import json

import numpy as np
import pytest

from _oracles import oracle_rate_report
from conftest import P_MAX, random_state, small_geometry, tiny_geometry
from sfim.geometry import (DesignState, UserChannelParams, generate_scenario,
                           initial_state)
from sfim.objective import (MORPH_RANGE, POWER_BUDGET, POWER_SIGN, UNIT_MODULUS,
                            check_feasibility, evaluate)


def test_zero_power_means_zero_rate(geom, scenario):
    state = initial_state(geom, "sfim", 0, P_MAX)
    state = DesignState(morph=state.morph, phases=state.phases,
                        power_amps=np.zeros(geom.num_users))
    report = evaluate(geom, state, scenario)
    assert np.all(report.sinr == 0)
    assert report.sum_rate == 0.0


def test_single_user_has_no_interference(scenario_config):
    geom = small_geometry(num_users=1)
    scenario = generate_scenario(geom, scenario_config, 2)
    state = random_state(geom, np.random.default_rng(0))
    report = evaluate(geom, state, scenario)
    expected = report.J[0][0] / scenario[0].noise_power
    assert report.sinr[0] == pytest.approx(expected, rel=1e-12)
    assert report.sum_rate == pytest.approx(np.log2(1 + expected), rel=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_matches_scalar_oracle_on_tiny_instances(seed, scenario_config):
    geom = tiny_geometry()
    scenario = generate_scenario(geom, scenario_config, seed)
    state = random_state(geom, np.random.default_rng(seed + 50))
    report = evaluate(geom, state, scenario)
    J, sinr, rates, total = oracle_rate_report(geom, state, scenario)
    np.testing.assert_allclose(report.J, J, rtol=1e-10)
    np.testing.assert_allclose(report.sinr, sinr, rtol=1e-10)
    np.testing.assert_allclose(report.rates, rates, rtol=1e-10)
    assert report.sum_rate == pytest.approx(total, rel=1e-10)


def test_signal_power_matrix_structure(geom, scenario):
    # J[k, i] must equal the i-th power amplitude squared times |g[k, i]|^2
    from sfim.channel import build_stack
    state = random_state(geom, np.random.default_rng(1))
    report = evaluate(geom, state, scenario)
    stack = build_stack(geom, state, scenario)
    want = (state.power_amps[None, :] ** 2) * np.abs(stack.cascaded) ** 2
    np.testing.assert_allclose(report.J, want, rtol=1e-12)


def test_diag_channel_reformulation(geom, scenario):
    # row sums of J equal |diag(g_k) p|^2 with and without stream k masked
    from sfim.channel import build_stack
    state = random_state(geom, np.random.default_rng(2))
    report = evaluate(geom, state, scenario)
    stack = build_stack(geom, state, scenario)
    for k in range(geom.num_users):
        gk = np.diag(stack.cascaded[k])
        total = np.linalg.norm(gk @ state.power_amps) ** 2
        masked = state.power_amps.copy()
        masked[k] = 0.0
        interf = np.linalg.norm(gk @ masked) ** 2
        assert report.J[k].sum() == pytest.approx(total, rel=1e-12)
        assert report.J[k].sum() - report.J[k][k] == pytest.approx(interf, rel=1e-12,
                                                                   abs=1e-30)


def test_power_scaling_monotonicity(geom, scenario):
    state = random_state(geom, np.random.default_rng(3))
    report = evaluate(geom, state, scenario)
    bumped = state.power_amps.copy()
    bumped[0] *= 1.05
    report2 = evaluate(geom, DesignState(morph=state.morph, phases=state.phases,
                                         power_amps=bumped), scenario)
    assert report2.sinr[0] > report.sinr[0]
    assert np.all(report2.sinr[1:] <= report.sinr[1:] + 1e-15)


def test_gain_scaling_isolates_one_user(geom, scenario_config, scenario):
    state = random_state(geom, np.random.default_rng(4))
    report = evaluate(geom, state, scenario)
    c = 2.5
    scaled = list(scenario)
    u0 = scaled[0]
    scaled[0] = UserChannelParams(path_gains=c * np.asarray(u0.path_gains),
                                  azimuth_aod=u0.azimuth_aod,
                                  elevation_aod=u0.elevation_aod,
                                  noise_power=u0.noise_power)
    report2 = evaluate(geom, state, tuple(scaled))
    np.testing.assert_allclose(report2.J[0], c ** 2 * report.J[0], rtol=1e-12)
    np.testing.assert_allclose(report2.J[1:], report.J[1:], rtol=1e-12)


def test_dimension_mismatch_raises(geom, scenario):
    state = random_state(geom, np.random.default_rng(5))
    bad = DesignState(morph=state.morph, phases=state.phases,
                      power_amps=np.ones(geom.num_users + 1))
    with pytest.raises(ValueError):
        evaluate(geom, bad, scenario)


def test_infeasible_state_is_flagged_not_fatal(geom, scenario):
    state = random_state(geom, np.random.default_rng(6))
    hot = DesignState(morph=state.morph, phases=state.phases,
                      power_amps=state.power_amps * 100)
    report = evaluate(geom, hot, scenario, p_max=P_MAX)
    assert not report.feasible
    assert np.isfinite(report.sum_rate)


class TestCheckFeasibility:
    def test_feasible_state_empty_list(self, geom):
        state = initial_state(geom, "sfim", 0, P_MAX)
        assert check_feasibility(geom, state, P_MAX) == []

    def test_negative_power_reported(self, geom):
        state = initial_state(geom, "sfim", 0, P_MAX)
        p = state.power_amps.copy()
        p[0] = -0.1
        bad = DesignState(morph=state.morph, phases=state.phases, power_amps=p)
        assert POWER_SIGN in check_feasibility(geom, bad, P_MAX)

    def test_budget_violation_reported(self, geom):
        state = initial_state(geom, "sfim", 0, P_MAX)
        bad = DesignState(morph=state.morph, phases=state.phases,
                          power_amps=state.power_amps * 2)
        assert POWER_BUDGET in check_feasibility(geom, bad, P_MAX)

    def test_morph_boundary_is_feasible(self, geom):
        state = initial_state(geom, "sfim", 0, P_MAX)
        morph = state.morph.copy()
        morph[0, 0] = geom.morph_limit  # closed interval
        edge = DesignState(morph=morph, phases=state.phases,
                           power_amps=state.power_amps)
        assert MORPH_RANGE not in check_feasibility(geom, edge, P_MAX)
        morph[0, 0] = geom.morph_limit * 1.001
        over = DesignState(morph=morph, phases=state.phases,
                           power_amps=state.power_amps)
        assert MORPH_RANGE in check_feasibility(geom, over, P_MAX)

    def test_modulus_violation_reported(self, geom):
        state = initial_state(geom, "sfim", 0, P_MAX)
        phases = state.phases.copy()
        phases[0, 0] = 1.5
        bad = DesignState(morph=state.morph, phases=phases,
                          power_amps=state.power_amps)
        assert UNIT_MODULUS in check_feasibility(geom, bad, P_MAX)


def test_report_serializes_to_json(geom, scenario):
    state = random_state(geom, np.random.default_rng(7))
    report = evaluate(geom, state, scenario, p_max=P_MAX)
    payload = json.loads(report.to_json())
    assert set(payload) == {"J", "sinr", "rates", "sum_rate", "feasible"}
    assert payload["sum_rate"] == pytest.approx(report.sum_rate)
    assert len(payload["J"]) == geom.num_users
    assert payload["feasible"] is True
