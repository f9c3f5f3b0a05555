"""Acceptance gate: every release criterion at its pinned tolerance.

Each test prints one [acceptance N] PASS/FAIL line (visible with ``pytest -s``
or on failure).  The three study-reproduction tests are Monte-Carlo heavy and
dominate the suite's runtime; their per-criterion wall-clock budgets are
asserted alongside the quantitative bands.

Run order matters only for wall clock; every test is independent and seeds are
fixed, so results are reproducible run to run.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from _oracles import oracle_rate_report
from conftest import NOISE_W, P_MAX, WAVELENGTH, random_state
from sfim.cli import main as cli_main
from sfim.config_io import load_run_config
from sfim.experiments import (ExperimentSpec, run_convergence, run_morph_sweep,
                              run_power_sweep)
from sfim.geometry import (ScenarioConfig, build_geometry, generate_scenario)
from sfim.gradients import run_gradient_checks
from sfim.objective import evaluate
from sfim.optimizer import (project_morph, project_phase, project_power,
                            run_ao)

N_JOBS = min(2, os.cpu_count() or 1)

DEFAULTS_CFG = os.path.join(os.path.dirname(__file__), "..", "configs", "defaults.cfg")


def _report(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance {number}] {name}: {status} {detail}".rstrip())


@pytest.fixture(scope="module")
def defaults():
    return load_run_config(DEFAULTS_CFG)


def test_criterion_1_gradient_fidelity():
    t0 = time.time()
    results = run_gradient_checks(n_instances=100, seed0=0)
    elapsed = time.time() - t0
    worst = {}
    for row in results:
        worst[row.block] = max(worst.get(row.block, 0.0), row.rel_error)
    ok = (worst["morph"] < 1e-5 and worst["power"] < 1e-5
          and worst["phase"] < 1e-4 and elapsed < 60.0)
    _report(1, "gradient fidelity", ok,
            f"(worst rel err morph={worst['morph']:.2e} power={worst['power']:.2e} "
            f"phase={worst['phase']:.2e}, {elapsed:.1f}s)")
    assert worst["morph"] < 1e-5
    assert worst["power"] < 1e-5
    assert worst["phase"] < 1e-4
    assert elapsed < 60.0


def test_criterion_2_projection_feasibility():
    rng = np.random.default_rng(0)
    n = 100_000
    t0 = time.time()

    morphs = rng.uniform(-3, 3, size=n) * WAVELENGTH
    clamped = project_morph(morphs, 0.5 * WAVELENGTH)
    morph_ok = bool(np.all(np.abs(clamped) <= 0.5 * WAVELENGTH))

    phases = rng.normal(size=n) + 1j * rng.normal(size=n)
    normalized = project_phase(phases)
    phase_ok = bool(np.all(np.abs(np.abs(normalized) - 1.0) <= 1e-12))

    powers = rng.uniform(-1.5, 1.5, size=(n, 4)) * math.sqrt(P_MAX)
    power_ok = True
    for row in powers:
        out = project_power(row, P_MAX)
        if np.any(out < 0) or np.sum(out ** 2) > P_MAX * (1 + 1e-12):
            power_ok = False
            break
    elapsed = time.time() - t0
    ok = morph_ok and phase_ok and power_ok and elapsed < 10.0
    _report(2, "projection feasibility", ok,
            f"(10^5 states per projection, {elapsed:.1f}s)")
    assert morph_ok and phase_ok and power_ok
    assert elapsed < 10.0


def test_criterion_3_monotone_ascent(defaults):
    from dataclasses import replace
    t0 = time.time()
    config = replace(defaults.optimizer, line_search="backtracking",
                     max_iters=250, tolerance=1e-4)
    worst_drop = 0.0
    for seed in range(50):
        scenario = generate_scenario(defaults.geometry, defaults.scenario, seed)
        _, trace = run_ao(defaults.geometry, scenario, config, seed)
        if len(trace) > 1:
            worst_drop = min(worst_drop, float(np.min(np.diff(trace.sum_rates))))
    elapsed = time.time() - t0
    ok = worst_drop >= -1e-12 and elapsed < 600.0
    _report(3, "monotone ascent with backtracking", ok,
            f"(50 seeds, worst step {worst_drop:.2e}, {elapsed:.0f}s)")
    assert worst_drop >= -1e-12
    assert elapsed < 600.0


def test_criterion_4_convergence_study(defaults, tmp_path):
    t0 = time.time()
    spec = ExperimentSpec(kind="convergence", values=(2, 6), trials=50,
                          config=defaults, out_dir=str(tmp_path / "conv"),
                          n_jobs=N_JOBS)
    points = run_convergence(spec)
    elapsed = time.time() - t0
    details = []
    ok = elapsed <= 1800.0
    for k in (2, 6):
        means = {mode: float(np.mean(points[k][mode]["finals"]))
                 for mode in ("sfim", "hsim", "rsim")}
        over_rsim = means["sfim"] / means["rsim"] - 1.0
        over_hsim = means["sfim"] / means["hsim"] - 1.0
        details.append(f"K={k}: +{over_rsim:.1%} vs rsim, +{over_hsim:.1%} vs hsim")
        ok = ok and 0.30 <= over_rsim <= 0.80 and 0.15 <= over_hsim <= 0.40
        # rigid baseline is the lower envelope of the three converged curves
        ok = ok and means["rsim"] <= min(means["sfim"], means["hsim"])
    _report(4, "convergence study reproduction", ok,
            f"({'; '.join(details)}, {elapsed:.0f}s)")
    for k in (2, 6):
        means = {mode: float(np.mean(points[k][mode]["finals"]))
                 for mode in ("sfim", "hsim", "rsim")}
        assert 0.30 <= means["sfim"] / means["rsim"] - 1.0 <= 0.80
        assert 0.15 <= means["sfim"] / means["hsim"] - 1.0 <= 0.40
        assert means["rsim"] <= min(means["sfim"], means["hsim"])
    # multiuser diversity: more users means a higher converged sum rate
    assert (np.mean(points[6]["sfim"]["finals"])
            >= np.mean(points[2]["sfim"]["finals"]))
    assert elapsed <= 1800.0


def test_criterion_5_morph_range_study(defaults, tmp_path):
    t0 = time.time()
    fractions = (0.1, 0.2, 0.3, 0.4, 0.5)
    spec = ExperimentSpec(kind="morph_sweep", values=fractions, trials=30,
                          config=defaults, out_dir=str(tmp_path / "morph"),
                          layer_counts=(4, 6), n_jobs=N_JOBS)
    results = run_morph_sweep(spec)
    elapsed = time.time() - t0

    gains = [float(np.mean(results[(4, f)]["sfim"]["finals"]))
             - float(np.mean(results[(4, f)]["rsim"]["finals"])) for f in fractions]
    increasing = all(b > a for a, b in zip(gains, gains[1:]))
    endpoints_ok = 0.3 <= gains[0] <= 3.0 and 0.3 <= gains[-1] <= 3.0

    rigid_series = [tuple(results[(4, f)]["rsim"]["finals"]) for f in fractions]
    rigid_flat = all(s == rigid_series[0] for s in rigid_series)

    ratio6 = (float(np.mean(results[(6, 0.5)]["sfim"]["finals"]))
              / float(np.mean(results[(6, 0.5)]["rsim"]["finals"])))
    ok = (increasing and endpoints_ok and rigid_flat and ratio6 >= 1.6
          and elapsed <= 3600.0)
    _report(5, "morphing range study reproduction", ok,
            f"(L=4 gains {['%.2f' % g for g in gains]} bps/Hz, "
            f"L=6 ratio {ratio6:.2f}, {elapsed:.0f}s)")
    assert increasing, f"gains not increasing: {gains}"
    assert endpoints_ok, f"endpoint gains out of band: {gains[0]}, {gains[-1]}"
    assert rigid_flat
    assert ratio6 >= 1.6
    assert elapsed <= 3600.0


def test_criterion_6_power_budget_study(defaults, tmp_path):
    from sfim.experiments import required_budget
    t0 = time.time()
    budgets = (12.0, 15.0, 18.0, 21.0, 24.0, 27.0)
    spec = ExperimentSpec(kind="power_sweep", values=budgets, trials=20,
                          config=defaults, out_dir=str(tmp_path / "power"),
                          element_counts=(64, 100), target_rate=7.0, n_jobs=N_JOBS)
    results = run_power_sweep(spec)
    elapsed = time.time() - t0

    dominance = True
    for budget in budgets:
        small_flex = np.asarray(results[(64, budget)]["sfim"]["finals"])
        big_rigid = np.asarray(results[(100, budget)]["rsim"]["finals"])
        slack = 2.0 * math.hypot(np.std(small_flex, ddof=1) / math.sqrt(len(small_flex)),
                                 np.std(big_rigid, ddof=1) / math.sqrt(len(big_rigid)))
        if small_flex.mean() < big_rigid.mean() - slack:
            dominance = False

    needed = {}
    for mode in ("sfim", "hsim", "rsim"):
        means = [float(np.mean(results[(100, b)][mode]["finals"])) for b in budgets]
        needed[mode] = required_budget(list(budgets), means, 7.0)
    crossings_exist = all(v is not None for v in needed.values())
    saving_rsim = needed["rsim"] - needed["sfim"] if crossings_exist else float("nan")
    saving_hsim = needed["hsim"] - needed["sfim"] if crossings_exist else float("nan")
    ok = (dominance and crossings_exist and saving_rsim >= 6.0
          and saving_hsim >= 3.0 and elapsed <= 3600.0)
    _report(6, "power budget study reproduction", ok,
            f"(64-element flexible vs 100-element rigid dominance={dominance}, "
            f"savings {saving_rsim:.1f} dB vs rigid, {saving_hsim:.1f} dB vs hybrid, "
            f"{elapsed:.0f}s)")
    assert dominance
    assert crossings_exist, f"target rate not bracketed: {needed}"
    assert saving_rsim >= 6.0
    assert saving_hsim >= 3.0
    assert elapsed <= 3600.0


def test_criterion_7_oracle_equivalence():
    geom = build_geometry(wavelength=WAVELENGTH, num_users=2, layers=1, nx=2, nz=2,
                          layer_offsets=2.5 * WAVELENGTH,
                          morph_limit=0.5 * WAVELENGTH)
    cfg = ScenarioConfig(noise_power=NOISE_W)
    worst = 0.0
    for seed in range(20):
        scenario = generate_scenario(geom, cfg, seed)
        state = random_state(geom, np.random.default_rng(seed + 1000))
        report = evaluate(geom, state, scenario)
        J, sinr, rates, total = oracle_rate_report(geom, state, scenario)
        worst = max(worst,
                    float(np.max(np.abs(report.J - J) / np.abs(J))),
                    float(np.max(np.abs(report.sinr - sinr) / np.abs(sinr))),
                    float(np.max(np.abs(report.rates - rates) / np.abs(rates))),
                    abs(report.sum_rate - total) / abs(total))
    ok = worst < 1e-10
    _report(7, "independent scalar oracle equivalence", ok,
            f"(20 instances, worst rel dev {worst:.2e})")
    assert worst < 1e-10


def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text("""
wavelength = 0.0107068735
num_users = 2
layers = 2
nx = 3
nz = 3
layer_offsets = 0.02676718375
morph_limit = 0.00535343675
p_max_dbm = 25
noise_power_dbm = -104
max_iters = 8
tolerance = 0
line_search = off
""")
    spec = tmp_path / "exp.cfg"
    spec.write_text(f"kind = convergence\nconfig = small.cfg\nvalues = 2\ntrials = 2\n")

    for tag in ("a", "b"):
        assert cli_main(["solve", "--config", str(cfg), "--seed", "11",
                         "--out", str(tmp_path / f"solve_{tag}")]) == 0
        assert cli_main(["experiment", str(spec), "--threads", "1",
                         "--out", str(tmp_path / f"exp_{tag}")]) == 0

    identical = True
    compared = []
    for name in ("trace.csv", "layer_1.csv", "layer_2.csv", "state.json"):
        a = (tmp_path / "solve_a" / name).read_bytes()
        b = (tmp_path / "solve_b" / name).read_bytes()
        compared.append(name)
        identical = identical and a == b
    a = (tmp_path / "exp_a" / "convergence.csv").read_bytes()
    b = (tmp_path / "exp_b" / "convergence.csv").read_bytes()
    compared.append("convergence.csv")
    identical = identical and a == b
    _report(8, "single-thread byte determinism", identical,
            f"(compared {', '.join(compared)})")
    assert identical
