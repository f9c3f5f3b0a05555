"""Monte-Carlo experiment runners: convergence curves, morphing-range sweeps,
power-budget sweeps and per-layer morphing heatmaps.

Every trial seed is shared by the three flexibility modes (identical scenario
and initialization), so mode comparisons are paired.  Per-point results are
written as JSON files under ``points/`` before aggregation; re-running an
experiment skips points whose file already exists, which makes interrupted
runs resumable.  A manifest naming every planned output is written before any
result file.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .config_io import RunConfig, dbm_to_watts
from .geometry import (MODES, DesignState, SystemGeometry, build_geometry,
                       generate_scenario)
from .optimizer import run_ao

KINDS = ("convergence", "morph_sweep", "power_sweep", "heatmap")


class PartialExperimentError(RuntimeError):
    """Some sweep points failed; completed points are retained on disk."""

    def __init__(self, failures):
        self.failures = failures
        super().__init__(f"{len(failures)} experiment point(s) failed: {failures}")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    values: tuple
    trials: int
    config: RunConfig
    out_dir: str
    seed_base: int = 0
    layer_counts: tuple = (4, 6)
    element_counts: tuple = (64, 100)
    target_rate: float = 7.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        object.__setattr__(self, "values", tuple(sorted(self.values)))


@dataclass
class SweepResult:
    """Mean sum rate per (swept value, mode) with its standard error."""

    x: list = field(default_factory=list)
    mode: list = field(default_factory=list)
    mean: list = field(default_factory=list)
    stderr: list = field(default_factory=list)
    trials: list = field(default_factory=list)

    def add(self, x, mode, finals):
        self.x.append(x)
        self.mode.append(mode)
        self.mean.append(float(np.mean(finals)))
        self.stderr.append(_stderr(finals))
        self.trials.append(len(finals))

    def series(self, mode):
        pairs = [(x, m) for x, md, m in zip(self.x, self.mode, self.mean) if md == mode]
        pairs.sort()
        return [p[0] for p in pairs], [p[1] for p in pairs]


def _stderr(samples) -> float:
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 2:
        return 0.0
    return float(np.std(samples, ddof=1) / math.sqrt(len(samples)))


def geometry_variant(config: RunConfig, **overrides) -> SystemGeometry:
    """Rebuild the geometry with some raw parameters overridden, re-deriving
    dependent defaults (array centering, auto spacings)."""
    kwargs = dict(config.geometry_kwargs)
    kwargs.update(overrides)
    return build_geometry(**kwargs)


# --- single trial worker (top level so it pickles for worker processes) ----

def _paired_trial(args):
    """Run all requested modes on one shared (scenario, initialization) seed.

    Returns per-mode padded sum-rate curves and the best achieved rate."""
    geometry, scenario_cfg, opt_cfg, seed, modes, pad_to = args
    scenario = generate_scenario(geometry, scenario_cfg, seed)
    out = {}
    for mode in modes:
        cfg = replace(opt_cfg, mode=mode)
        state, trace = run_ao(geometry, scenario, cfg, seed)
        curve = list(trace.sum_rates)
        if pad_to is not None:
            # converged runs hold their final value for the remaining iterations
            curve = curve + [curve[-1]] * (pad_to - len(curve))
        out[mode] = {
            "curve": curve if pad_to is not None else None,
            "final": max(trace.sum_rates),
            "morph": state.morph.tolist(),
        }
    return seed, out


def _run_trials(geometry, scenario_cfg, opt_cfg, seeds, modes, pad_to, n_jobs):
    jobs = [(geometry, scenario_cfg, opt_cfg, seed, modes, pad_to) for seed in seeds]
    if n_jobs > 1:
        with multiprocessing.Pool(n_jobs) as pool:
            results = pool.map(_paired_trial, jobs)
    else:
        results = [_paired_trial(job) for job in jobs]
    return dict(results)


# --- manifest and point bookkeeping ----------------------------------------

def _manifest_path(out_dir):
    return os.path.join(out_dir, "manifest.json")


def write_manifest(out_dir, payload: dict) -> None:
    with open(_manifest_path(out_dir), "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _point_path(out_dir, tag: str) -> str:
    return os.path.join(out_dir, "points", f"point_{tag}.json")


def _load_or_run_point(spec: ExperimentSpec, tag: str, runner):
    """Resume support: reuse the point file when present, else compute it."""
    path = _point_path(spec.out_dir, tag)
    if os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)
    data = runner()
    with open(path, "w") as fh:
        json.dump(data, fh)
    return data


def _experiment_scaffold(spec: ExperimentSpec, point_tags, final_outputs):
    os.makedirs(os.path.join(spec.out_dir, "points"), exist_ok=True)
    seeds = [spec.seed_base + t for t in range(spec.trials)]
    manifest = {
        "kind": spec.kind,
        "values": list(spec.values),
        "trials": spec.trials,
        "seeds": seeds,
        "config": spec.config.snapshot(),
        "version": __version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "finished_at": None,
        "outputs": sorted([os.path.join("points", f"point_{t}.json") for t in point_tags]
                          + list(final_outputs)),
    }
    write_manifest(spec.out_dir, manifest)
    return seeds, manifest


def _finalize_manifest(spec: ExperimentSpec, manifest: dict) -> None:
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    write_manifest(spec.out_dir, manifest)


# --- runners ----------------------------------------------------------------

def run_convergence(spec: ExperimentSpec) -> dict:
    """Mean per-iteration sum rate per mode for each user count in
    ``spec.values``; emits convergence.csv rows (iter, mode, K, mean, stderr)."""
    user_counts = [int(v) for v in spec.values]
    tags = [f"K{k}" for k in user_counts]
    seeds, manifest = _experiment_scaffold(spec, tags, ["convergence.csv"])
    pad_to = spec.config.optimizer.max_iters
    failures = []
    points = {}
    for k, tag in zip(user_counts, tags):
        def runner(k=k):
            geometry = geometry_variant(spec.config, num_users=k, num_antennas=None)
            results = _run_trials(geometry, spec.config.scenario, spec.config.optimizer,
                                  seeds, MODES, pad_to, spec.n_jobs)
            return {mode: {
                "curves": [results[s][mode]["curve"] for s in seeds],
                "finals": [results[s][mode]["final"] for s in seeds],
            } for mode in MODES}
        try:
            points[k] = _load_or_run_point(spec, tag, runner)
        except Exception as exc:  # point failures keep completed work
            failures.append((tag, repr(exc)))
    if failures:
        raise PartialExperimentError(failures)

    with open(os.path.join(spec.out_dir, "convergence.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "mode", "K", "mean", "stderr"])
        for k in user_counts:
            for mode in MODES:
                curves = np.array(points[k][mode]["curves"])
                for it in range(curves.shape[1]):
                    writer.writerow([it + 1, mode, k,
                                     repr(float(np.mean(curves[:, it]))),
                                     repr(_stderr(curves[:, it]))])
    _finalize_manifest(spec, manifest)
    return points


def run_morph_sweep(spec: ExperimentSpec) -> dict:
    """Re-optimize every mode at each morphing range (``spec.values`` holds
    ranges as fractions of the wavelength) for each stack depth; emits one
    sweep CSV per layer count."""
    lam = spec.config.geometry.wavelength
    total_depth = sum(spec.config.geometry.layer_offsets)
    csvs = [f"sweep_L{L}.csv" for L in spec.layer_counts]
    tags = [f"L{L}_y{frac}" for L in spec.layer_counts for frac in spec.values]
    seeds, manifest = _experiment_scaffold(spec, tags, csvs)
    failures = []
    results = {}
    for L in spec.layer_counts:
        offsets = (total_depth / L,) * L
        for frac in spec.values:
            limit = frac * lam
            if limit >= min(offsets) / 2.0:
                failures.append((f"L{L}_y{frac}",
                                 "morphing range reaches half the layer gap"))
                continue

            def runner(L=L, offsets=offsets, limit=limit):
                geometry = geometry_variant(spec.config, layers=L,
                                            layer_offsets=offsets, morph_limit=limit)
                trial = _run_trials(geometry, spec.config.scenario,
                                    spec.config.optimizer, seeds, MODES, None,
                                    spec.n_jobs)
                return {mode: {"finals": [trial[s][mode]["final"] for s in seeds]}
                        for mode in MODES}
            try:
                results[(L, frac)] = _load_or_run_point(spec, f"L{L}_y{frac}", runner)
            except Exception as exc:
                failures.append((f"L{L}_y{frac}", repr(exc)))

    for L in spec.layer_counts:
        sweep = SweepResult()
        for frac in spec.values:
            if (L, frac) not in results:
                continue
            for mode in MODES:
                sweep.add(frac, mode, results[(L, frac)][mode]["finals"])
        _write_sweep_csv(os.path.join(spec.out_dir, f"sweep_L{L}.csv"), sweep)
    if failures:
        raise PartialExperimentError(failures)
    _finalize_manifest(spec, manifest)
    return results


def run_power_sweep(spec: ExperimentSpec) -> dict:
    """Re-optimize every mode at each transmit power budget (``spec.values``
    in dBm) for each per-layer element count; also reports the interpolated
    budget each mode needs to reach the target sum rate."""
    csvs = [f"sweep_N{n}.csv" for n in spec.element_counts] + ["power_saving.csv"]
    tags = [f"N{n}_P{budget}" for n in spec.element_counts for budget in spec.values]
    seeds, manifest = _experiment_scaffold(spec, tags, csvs)
    failures = []
    results = {}
    for n_elem in spec.element_counts:
        side = int(round(math.sqrt(n_elem)))
        if side * side != n_elem:
            raise ValueError(f"element count {n_elem} is not a square grid")
        for budget in spec.values:
            def runner(n_elem=n_elem, side=side, budget=budget):
                geometry = geometry_variant(spec.config, nx=side, nz=side)
                opt = replace(spec.config.optimizer, p_max=dbm_to_watts(budget))
                trial = _run_trials(geometry, spec.config.scenario, opt, seeds,
                                    MODES, None, spec.n_jobs)
                return {mode: {"finals": [trial[s][mode]["final"] for s in seeds]}
                        for mode in MODES}
            try:
                results[(n_elem, budget)] = _load_or_run_point(
                    spec, f"N{n_elem}_P{budget}", runner)
            except Exception as exc:
                failures.append((f"N{n_elem}_P{budget}", repr(exc)))

    saving_rows = []
    for n_elem in spec.element_counts:
        sweep = SweepResult()
        for budget in spec.values:
            if (n_elem, budget) not in results:
                continue
            for mode in MODES:
                sweep.add(budget, mode, results[(n_elem, budget)][mode]["finals"])
        _write_sweep_csv(os.path.join(spec.out_dir, f"sweep_N{n_elem}.csv"), sweep)
        for mode in MODES:
            xs, means = sweep.series(mode)
            saving_rows.append([n_elem, mode, spec.target_rate,
                                required_budget(xs, means, spec.target_rate)])
    with open(os.path.join(spec.out_dir, "power_saving.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["elements", "mode", "target_rate", "budget_dbm"])
        for row in saving_rows:
            writer.writerow([row[0], row[1], repr(row[2]),
                             "nan" if row[3] is None else repr(row[3])])
    if failures:
        raise PartialExperimentError(failures)
    _finalize_manifest(spec, manifest)
    return results


def required_budget(budgets_dbm, means, target: float) -> float | None:
    """Budget (dBm) at which the mean-rate curve reaches ``target``, linearly
    interpolated; None when the target lies outside the swept curve."""
    if not budgets_dbm:
        return None
    means = np.asarray(means, dtype=float)
    budgets = np.asarray(budgets_dbm, dtype=float)
    if target > means.max() or target < means.min():
        return None
    return float(np.interp(target, means, budgets))


def _write_sweep_csv(path, sweep: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "mode", "mean", "stderr", "trials"])
        for i in range(len(sweep.x)):
            writer.writerow([repr(float(sweep.x[i])), sweep.mode[i],
                             repr(sweep.mean[i]), repr(sweep.stderr[i]),
                             sweep.trials[i]])


def export_heatmap(state, geometry: SystemGeometry, out_dir) -> list[str]:
    """Write one CSV grid of morph values (meters) per layer.

    Grid cell (row r, col c) holds the morph of element ``r * nx + c``,
    matching the element indexing used for positions.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for layer in range(1, geometry.layers + 1):
        grid = state.morph[layer - 1].reshape(geometry.nz, geometry.nx)
        path = os.path.join(out_dir, f"layer_{layer}.csv")
        np.savetxt(path, grid, delimiter=",", fmt="%.17e")
        paths.append(path)
    return paths


def run_heatmap(spec: ExperimentSpec) -> dict:
    """One optimized example: run the configured mode once and export the
    per-layer morph grids."""
    tags = ["heatmap"]
    layer_files = [f"layer_{l}.csv" for l in range(1, spec.config.geometry.layers + 1)]
    seeds, manifest = _experiment_scaffold(spec, tags, layer_files)

    def runner():
        scenario = generate_scenario(spec.config.geometry, spec.config.scenario, seeds[0])
        state, trace = run_ao(spec.config.geometry, scenario,
                              spec.config.optimizer, seeds[0])
        return {"morph": state.morph.tolist(), "sum_rate": max(trace.sum_rates)}

    point = _load_or_run_point(spec, "heatmap", runner)
    morph = np.array(point["morph"])
    state = DesignState(morph=morph, phases=np.ones(morph.shape, dtype=complex),
                        power_amps=np.ones(spec.config.geometry.num_users))
    export_heatmap(state, spec.config.geometry, spec.out_dir)
    _finalize_manifest(spec, manifest)
    return point


RUNNERS = {
    "convergence": run_convergence,
    "morph_sweep": run_morph_sweep,
    "power_sweep": run_power_sweep,
    "heatmap": run_heatmap,
}


def run_experiment(spec: ExperimentSpec):
    return RUNNERS[spec.kind](spec)


def load_experiment_spec(path, config: RunConfig | None = None, *,
                         out_override=None, trials_override=None,
                         n_jobs: int = 1) -> ExperimentSpec:
    """Parse an experiment spec file (same flat key-value format).

    Keys: kind, values, trials, config (path, relative to the spec file),
    out, seed_base, layer_counts, element_counts, target_rate.
    """
    from .config_io import ConfigError, _Reader, load_run_config, parse_flat_config

    reader = _Reader(parse_flat_config(path))
    kind = reader.get_str("kind", choices=KINDS)
    if kind is None:
        raise ConfigError("missing required key 'kind'", key="kind")
    config_path = reader.get_raw("config")
    if config is None:
        if config_path is None:
            raise ConfigError("missing required key 'config'", key="config")
        base = os.path.dirname(os.path.abspath(path))
        config = load_run_config(os.path.join(base, config_path))
    values = reader.get_floats("values", default=() if kind == "heatmap" else None)
    if values is None:
        raise ConfigError("missing required key 'values'", key="values")
    trials = reader.get_int("trials", 1)
    if trials_override is not None:
        trials = trials_override
    out_dir = reader.get_raw("out")
    if out_override is not None:
        out_dir = out_override
    if out_dir is None:
        out_dir = "experiment_out"
    element_counts = tuple(int(v) for v in reader.get_floats("element_counts", (64, 100)))
    for n_elem in element_counts:
        side = int(round(math.sqrt(n_elem)))
        if side * side != n_elem:
            raise ConfigError(f"element count {n_elem} is not a square grid",
                              key="element_counts")
    spec = ExperimentSpec(
        kind=kind,
        values=values,
        trials=trials,
        config=config,
        out_dir=str(out_dir),
        seed_base=reader.get_int("seed_base", 0),
        layer_counts=tuple(int(v) for v in reader.get_floats("layer_counts", (4, 6))),
        element_counts=element_counts,
        target_rate=reader.get_float("target_rate", 7.0),
        n_jobs=n_jobs,
    )
    reader.reject_leftovers()
    return spec
