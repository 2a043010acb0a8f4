import json

import pytest

from layerquant.config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
    standard_benchmark,
    standard_benchmark_text,
)


def test_defaults_carry_published_hyperparameters():
    cfg = RunConfig()
    assert cfg.calibration.delta1 == 0.001 and cfg.calibration.delta2 == 0.075
    assert cfg.calibration.num_samples == 50
    assert cfg.calibration.budgets == {"frozen": 1, "light": 30, "full": 200}
    assert cfg.layer.rank == 32 and cfg.layer.rotation == "walsh-hadamard" and cfg.layer.act_quantizer == "draq"
    assert (cfg.layer.bits_w, cfg.layer.bits_a) == (4, 4)


def test_standard_benchmark_definition():
    cfg = standard_benchmark()
    assert cfg.benchmark.seeds == list(range(100))
    assert cfg.model.depth == 4 and cfg.model.dims == [256, 512, 512, 512, 256]
    assert cfg.data.outlier_channels == 8 and cfg.data.outlier_gain == 100.0


def test_shipped_file_equals_defaults():
    assert standard_benchmark_text() == dump_config(RunConfig())


def test_roundtrip_byte_identical(tmp_path):
    text = dump_config(RunConfig())
    path = tmp_path / "c.json"
    path.write_text(text)
    assert dump_config(load_config(path)) == text
    assert config_to_dict(config_from_dict(json.loads(text))) == json.loads(text)


def test_partial_config_fills_defaults():
    cfg = config_from_dict({"seed": 5, "layer": {"rank": 8}})
    assert cfg.seed == 5 and cfg.layer.rank == 8 and cfg.layer.bits_w == 4
    assert cfg.calibration.delta2 == 0.075


@pytest.mark.parametrize(
    "bad",
    [
        {"nope": 1},
        {"layer": {"rnak": 3}},
        {"calibration": {"delta1": 0.5, "delta2": 0.1}},
        {"calibration": {"scheme": "random"}},
        {"model": {"depth": 2}},
        {"version": 99},
        {"data": "x"},
    ],
)
def test_bad_configs(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_specs_follow_seed():
    cfg = RunConfig()
    assert cfg.model_spec(3).seed == 3 and cfg.data_spec(3).channels == 256
    assert cfg.calib_config(4).seed == 4
    assert cfg.replace(seed=9).model_spec().seed == 9
