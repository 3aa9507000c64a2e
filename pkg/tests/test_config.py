import pytest

from lmcsc.config import TrainConfig, config_dumps, config_load, config_loads
from lmcsc.errors import ConfigError


def test_empty_file_gives_paper_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = config_load(path)
    assert cfg.k == 85
    assert cfg.kernel_size == 5
    assert cfg.batch_size == 32
    assert cfg.patches_total == 40000
    assert cfg.patch_size == 64
    assert cfg.mu_init == 0.2 and cfg.gamma_init == 0.2
    assert cfg.weight_std == 0.01


def test_even_kernel_rejected():
    with pytest.raises(ConfigError, match="odd"):
        config_loads("kernel_size: 4\n")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config keys: kernelsize"):
        config_loads("kernelsize: 5\n")


def test_round_trip_equality():
    cfg = TrainConfig(k=12, lr=3e-3, steps=123, manifest_path="m.tsv", tied_weights=True)
    assert config_loads(config_dumps(cfg)) == cfg


def test_scientific_notation_string_coerced():
    cfg = config_loads("lr: 1e-4\n")
    assert cfg.lr == 1e-4


def test_int_for_float_field_ok():
    assert config_loads("lr: 1\n").lr == 1.0


def test_type_errors():
    with pytest.raises(ConfigError, match="k"):
        config_loads("k: 4.5\n")
    with pytest.raises(ConfigError, match="tied_weights"):
        config_loads("tied_weights: maybe\n")


def test_value_range_errors():
    with pytest.raises(ConfigError, match="scale"):
        config_loads("scale: 3\n")
    with pytest.raises(ConfigError, match="lr"):
        config_loads("lr: 0\n")
    with pytest.raises(ConfigError, match="val_fraction"):
        config_loads("val_fraction: 1.0\n")


def test_parse_error_has_line_number():
    with pytest.raises(ConfigError, match="line"):
        config_loads("k: [unclosed\nsteps: 3\n")


def test_non_mapping_rejected():
    with pytest.raises(ConfigError, match="mapping"):
        config_loads("- a\n- b\n")


def test_snapshot_drops_paths():
    cfg = TrainConfig(manifest_path="/data/m.tsv", output_dir="/runs/x")
    text = config_dumps(cfg, include_paths=False)
    assert "manifest_path" not in text and "output_dir" not in text
    reparsed = config_loads(text)
    assert reparsed.manifest_path == "" and reparsed.k == cfg.k
