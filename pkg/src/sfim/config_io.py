"""Flat key-value configuration files.

Syntax: one ``key = value`` per line, ``#`` starts a comment, arrays are
comma-separated.  All physical quantities are SI base units except keys
suffixed ``_dbm``, which are converted to watts at load time; nothing
downstream ever sees dBm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .geometry import ScenarioConfig, SystemGeometry, build_geometry
from .optimizer import OptimizerConfig


class ConfigError(Exception):
    def __init__(self, message: str, *, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * math.log10(watts * 1e3)


def parse_flat_config(path) -> dict[str, tuple[str, int]]:
    """Raw key -> (value string, line number) mapping with syntax checking."""
    entries: dict[str, tuple[str, int]] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
            key, value = line.split("=", 1)
            key = key.strip()
            value = value.strip()
            if not key or not value:
                raise ConfigError(f"empty key or value in {line!r}", line=lineno)
            if key in entries:
                raise ConfigError(f"duplicate key {key!r}", line=lineno, key=key)
            entries[key] = (value, lineno)
    return entries


class _Reader:
    """Typed, consume-once access to parsed entries; leftovers are errors."""

    def __init__(self, entries: dict[str, tuple[str, int]]):
        self.entries = dict(entries)

    def _take(self, key):
        return self.entries.pop(key, None)

    def has(self, key: str) -> bool:
        return key in self.entries

    def get_float(self, key: str, default=None, required: bool = False):
        item = self._take(key)
        if item is None:
            if required:
                raise ConfigError(f"missing required key {key!r}", key=key)
            return default
        value, lineno = item
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"key {key!r} expects a number, got {value!r}",
                              line=lineno, key=key) from None

    def get_int(self, key: str, default=None, required: bool = False):
        item = self._take(key)
        if item is None:
            if required:
                raise ConfigError(f"missing required key {key!r}", key=key)
            return default
        value, lineno = item
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}",
                              line=lineno, key=key) from None

    def get_floats(self, key: str, default=None, required: bool = False):
        item = self._take(key)
        if item is None:
            if required:
                raise ConfigError(f"missing required key {key!r}", key=key)
            return default
        value, lineno = item
        try:
            return tuple(float(part) for part in value.split(","))
        except ValueError:
            raise ConfigError(f"key {key!r} expects comma-separated numbers, got {value!r}",
                              line=lineno, key=key) from None

    def get_str(self, key: str, default=None, choices=None):
        item = self._take(key)
        if item is None:
            return default
        value, lineno = item
        value = value.strip().lower()
        if choices is not None and value not in choices:
            raise ConfigError(f"key {key!r} must be one of {choices}, got {value!r}",
                              line=lineno, key=key)
        return value

    def get_raw(self, key: str, default=None):
        """Case-preserving string value (paths and the like)."""
        item = self._take(key)
        if item is None:
            return default
        return item[0]

    def get_strs(self, key: str, default=None):
        item = self._take(key)
        if item is None:
            return default
        value, _ = item
        return tuple(part.strip().lower() for part in value.split(","))

    def reject_leftovers(self):
        if self.entries:
            key, (_, lineno) = next(iter(self.entries.items()))
            raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)


@dataclass(frozen=True)
class RunConfig:
    """One resolved run setup: layout, scenario sampling and optimizer knobs.

    ``geometry_kwargs`` keeps the pre-default constructor arguments so
    experiment sweeps can rebuild variants (different layer counts, grid
    sizes, user counts) with the derived defaults re-applied.
    """

    geometry: SystemGeometry
    scenario: ScenarioConfig
    optimizer: OptimizerConfig
    geometry_kwargs: dict

    def snapshot(self) -> dict:
        return {
            "geometry": asdict(self.geometry),
            "scenario": asdict(self.scenario),
            "optimizer": asdict(self.optimizer),
        }


def _power_key(reader: _Reader, base: str, required: bool) -> float | None:
    watts = reader.get_float(base)
    dbm = reader.get_float(base + "_dbm")
    if watts is not None and dbm is not None:
        raise ConfigError(f"give either {base!r} or {base + '_dbm'!r}, not both", key=base)
    if watts is None and dbm is None:
        if required:
            raise ConfigError(f"missing required key {base!r} (or {base + '_dbm'!r})",
                              key=base)
        return None
    return watts if watts is not None else dbm_to_watts(dbm)


def load_run_config(path) -> RunConfig:
    reader = _Reader(parse_flat_config(path))

    wavelength = reader.get_float("wavelength")
    frequency = reader.get_float("carrier_frequency_hz")
    if wavelength is None and frequency is None:
        raise ConfigError("missing required key 'wavelength' (or 'carrier_frequency_hz')",
                          key="wavelength")

    geometry_kwargs = dict(
        wavelength=wavelength,
        carrier_frequency_hz=frequency,
        num_users=reader.get_int("num_users", required=True),
        num_antennas=reader.get_int("num_antennas"),
        layers=reader.get_int("layers", required=True),
        nx=reader.get_int("nx", required=True),
        nz=reader.get_int("nz", required=True),
        antenna_spacing=reader.get_float("antenna_spacing"),
        element_spacing_x=reader.get_float("element_spacing_x"),
        element_spacing_z=reader.get_float("element_spacing_z"),
        layer_offsets=reader.get_floats("layer_offsets", required=True),
        antenna_area=reader.get_float("antenna_area"),
        element_area=reader.get_float("element_area"),
        morph_limit=reader.get_float("morph_limit", required=True),
        x_ref=reader.get_float("x_ref"),
        z_ref=reader.get_float("z_ref"),
    )
    try:
        geometry = build_geometry(**geometry_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    noise_power = _power_key(reader, "noise_power", required=True)
    scenario_kwargs = dict(
        noise_power=noise_power,
        num_paths=reader.get_int("num_paths", 6),
        pathloss_exponent=reader.get_float("pathloss_exponent", 3.5),
        user_distance=(reader.get_float("user_distance_min", 95.0),
                       reader.get_float("user_distance_max", 105.0)),
        user_aod=(reader.get_float("user_aod_min", -math.pi / 4),
                  reader.get_float("user_aod_max", math.pi / 4)),
        scatterer_distance=(reader.get_float("scatterer_distance_min", 50.0),
                            reader.get_float("scatterer_distance_max", 105.0)),
        scatterer_aod=(reader.get_float("scatterer_aod_min", -math.pi / 2),
                       reader.get_float("scatterer_aod_max", -math.pi / 4)),
    )
    try:
        scenario = ScenarioConfig(**scenario_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    p_max = _power_key(reader, "p_max", required=True)
    optimizer_kwargs = dict(
        p_max=p_max,
        mode=reader.get_str("mode", "sfim", choices=("sfim", "hsim", "rsim")),
        step_morph=reader.get_float("step_morph"),
        step_power=reader.get_float("step_power"),
        step_phase=reader.get_float("step_phase"),
        tolerance=reader.get_float("tolerance", 1e-4),
        max_iters=reader.get_int("max_iters", 150),
        line_search=reader.get_str("line_search", "backtracking",
                                   choices=("backtracking", "off")),
        backtrack_beta=reader.get_float("backtrack_beta", 0.5),
        backtrack_c1=reader.get_float("backtrack_c1", 1e-4),
        power_projection=reader.get_str("power_projection", "sequential",
                                        choices=("sequential", "exact")),
        block_order=reader.get_strs("block_order", ("morph", "power", "phase")),
    )
    try:
        optimizer = OptimizerConfig(**optimizer_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    reader.reject_leftovers()
    return RunConfig(geometry=geometry, scenario=scenario, optimizer=optimizer,
                     geometry_kwargs=geometry_kwargs)
