import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quditls.config import (ConfigError, ExperimentConfig, dump_config_text, load_config,
                            parse_config_text, parse_number)
from quditls.report import ReportError, csv_text, dumps, load_report, make_report, to_jsonable


def test_parse_number():
    assert parse_number("2*pi*1.1e6") == pytest.approx(2 * math.pi * 1.1e6)
    assert parse_number("pi/2") == pytest.approx(math.pi / 2)
    assert parse_number("inf") == math.inf
    assert parse_number("-3e-2") == -0.03
    for bad in ("", "__import__('os')", "1/0", "pi pi"):
        with pytest.raises(ConfigError):
            parse_number(bad)


def test_defaults_match_experiment():
    cfg = ExperimentConfig()
    assert cfg.trap.omega_com == pytest.approx(2 * math.pi * 1.1e6)
    assert cfg.lightshift.gate_time == pytest.approx(35e-6)
    assert cfg.noise.heating_rate == 15.0
    assert cfg.noise.motional_coherence == pytest.approx(16e-3)
    assert load_config(None) == cfg


def test_round_trip_through_text():
    text = """
    [experiment]
    dimension = 3
    dims = 2, 3
    motion_n_max = 8
    [noise]
    heating_rate = 30
    motional_coherence = inf
    transition_sensitivity = 0, 0.5, 1
    [lightshift]
    theta = 2*pi/3   ; inline comment
    """
    cfg = parse_config_text("\n".join(l.strip() for l in text.splitlines()))
    assert cfg.dimension == 3 and cfg.dims == (2, 3) and cfg.motion_n_max == 8
    assert cfg.noise.motional_coherence == math.inf
    assert cfg.lightshift.theta == pytest.approx(2 * math.pi / 3)
    again = parse_config_text(dump_config_text(cfg))
    assert again == cfg


@pytest.mark.parametrize("text", [
    "[nosuch]\na = 1",
    "[experiment]\nfoo = 1",
    "[experiment]\ndimension = 7",
    "[experiment]\ndimension = 2.5",
    "[noise]\nheating_rate = -1",
    "[lightshift]\nfix = shift",
    "[experiment]\njoint_budget = maybe",
    "not an ini file",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_overrides_and_seeds():
    cfg = ExperimentConfig().with_overrides(seed=7, dimension=4, samples=3, fmt="csv", out="x")
    assert cfg.dimension == 4 and cfg.dims == (4,)
    assert cfg.noise.n_samples == 3 and cfg.output_format == "csv"
    # derived streams depend only on the config seed
    assert cfg.noise_seed == ExperimentConfig(seed=7).noise_seed
    assert cfg.noise_seed != ExperimentConfig(seed=8).noise_seed
    assert cfg.resolved_noise().rng_seed == cfg.noise_seed
    a = cfg.readout_rng().standard_normal(3)
    assert np.allclose(a, cfg.readout_rng().standard_normal(3))
    with pytest.raises(ConfigError):
        cfg.with_overrides(dimension=9)


def test_json_conventions():
    rep = make_report("x", {"a": 1}, {"z": 1 + 2j, "t": {(0, 1): np.float64(0.5)},
                                     "inf": np.inf, "arr": np.arange(2)})
    j = to_jsonable(rep)
    assert j["z"] == [1.0, 2.0] and j["t"] == {"0,1": 0.5} and j["inf"] == "inf"
    assert j["schema"] == 1
    text = dumps(rep)
    assert load_report(text)["arr"] == [0, 1]
    with pytest.raises(ReportError):
        load_report('{"schema": 2, "command": "x", "config": {}}')
    with pytest.raises(ReportError):
        load_report("{not json")


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=5))
def test_csv_floats_round_trip(xs):
    text = csv_text(["v"], [[x] for x in xs])
    back = [float(line) for line in text.splitlines()[1:]]
    assert back == xs


def test_shipped_config_equals_defaults():
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "configs" / "default.ini"
    assert load_config(path) == ExperimentConfig()
