import math

import pytest

from sfim.config_io import (ConfigError, dbm_to_watts, load_run_config,
                            parse_flat_config, watts_to_dbm)

GOOD = """
# minimal valid setup
wavelength = 0.0107
num_users = 2
layers = 2
nx = 2
nz = 2
layer_offsets = 0.0267
morph_limit = 0.005
p_max_dbm = 25
noise_power_dbm = -104
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_dbm_round_trip():
    assert dbm_to_watts(25.0) == pytest.approx(0.31622776601683794, rel=1e-15)
    assert dbm_to_watts(-104.0) == pytest.approx(3.9810717055349693e-14, rel=1e-15)
    assert watts_to_dbm(dbm_to_watts(7.5)) == pytest.approx(7.5, rel=1e-12)


def test_minimal_config_loads_with_defaults(tmp_path):
    rc = load_run_config(write(tmp_path, GOOD))
    assert rc.geometry.num_users == 2
    assert rc.geometry.element_spacing_x == pytest.approx(0.0107 / 2)
    assert rc.geometry.layer_offsets == (0.0267, 0.0267)
    assert rc.scenario.num_paths == 6
    assert rc.scenario.pathloss_exponent == 3.5
    assert rc.optimizer.p_max == pytest.approx(dbm_to_watts(25))
    assert rc.optimizer.mode == "sfim"
    assert rc.optimizer.line_search == "backtracking"


def test_wavelength_from_carrier_frequency(tmp_path):
    text = GOOD.replace("wavelength = 0.0107", "carrier_frequency_hz = 28e9")
    rc = load_run_config(write(tmp_path, text))
    assert rc.geometry.wavelength == pytest.approx(299792458.0 / 28e9, rel=1e-15)


def test_missing_required_key_names_it(tmp_path):
    text = GOOD.replace("num_users = 2", "")
    with pytest.raises(ConfigError) as err:
        load_run_config(write(tmp_path, text))
    assert "num_users" in str(err.value)


def test_missing_wavelength_and_frequency(tmp_path):
    text = GOOD.replace("wavelength = 0.0107", "")
    with pytest.raises(ConfigError) as err:
        load_run_config(write(tmp_path, text))
    assert "wavelength" in str(err.value)


def test_unknown_key_rejected_with_line(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_run_config(write(tmp_path, GOOD + "mystery_knob = 3\n"))
    assert "mystery_knob" in str(err.value)
    assert "line" in str(err.value)


def test_both_power_forms_rejected(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_run_config(write(tmp_path, GOOD + "p_max = 0.3\n"))
    assert "p_max" in str(err.value)


def test_malformed_line_reports_number(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_flat_config(write(tmp_path, "wavelength 0.01\n"))
    assert "line 1" in str(err.value)


def test_duplicate_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_flat_config(write(tmp_path, "a = 1\na = 2\n"))


def test_bad_number_type(tmp_path):
    text = GOOD.replace("num_users = 2", "num_users = two")
    with pytest.raises(ConfigError) as err:
        load_run_config(write(tmp_path, text))
    assert "num_users" in str(err.value)


def test_bad_mode_choice(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_run_config(write(tmp_path, GOOD + "mode = wobbly\n"))
    assert "mode" in str(err.value)


def test_layer_offsets_accepts_per_layer_list(tmp_path):
    text = GOOD.replace("layer_offsets = 0.0267", "layer_offsets = 0.02, 0.03")
    rc = load_run_config(write(tmp_path, text))
    assert rc.geometry.layer_offsets == (0.02, 0.03)


def test_invalid_geometry_surfaces_as_config_error(tmp_path):
    text = GOOD.replace("morph_limit = 0.005", "morph_limit = 0.02")
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, text))


def test_canonical_defaults_file_is_consistent():
    rc = load_run_config("configs/defaults.cfg")
    lam = rc.geometry.wavelength
    assert lam == pytest.approx(299792458.0 / 28e9, rel=1e-12)
    assert rc.geometry.layers == 4
    assert rc.geometry.n_elements == 64
    assert rc.geometry.num_users == 4
    # every derived constant written in the file matches its definition
    assert rc.geometry.antenna_spacing == pytest.approx(lam / 2, rel=1e-12)
    assert rc.geometry.element_area == pytest.approx(lam * lam / 4, rel=1e-12)
    assert sum(rc.geometry.layer_offsets) == pytest.approx(10 * lam, rel=1e-12)
    assert rc.geometry.morph_limit == pytest.approx(lam / 2, rel=1e-12)
    assert rc.scenario.noise_power == pytest.approx(dbm_to_watts(-104), rel=1e-12)
    assert rc.optimizer.p_max == pytest.approx(dbm_to_watts(25), rel=1e-12)
    assert rc.scenario.user_aod == pytest.approx((-math.pi / 4, math.pi / 4))
