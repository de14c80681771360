"""Config resolution, validation, and hashing."""

import pytest

from dualmar.config import DEFAULTS, config_hash, load_config, resolve_config
from dualmar.errors import ConfigInvalid


def test_defaults_resolve_and_derive_seeds():
    cfg = resolve_config()
    assert cfg["seed"] == 7
    assert cfg["data"]["seed"] == 7101
    assert cfg["split"]["seed"] == 7211
    assert cfg["kge"]["seed"] == 7307
    assert cfg["encoder"]["seed"] == 7401
    assert cfg["train"]["seed"] == 7503
    assert cfg["kg"]["relation_theta"] == cfg["kg"]["theta"]
    # the template itself stays untouched
    assert DEFAULTS["data"]["seed"] is None


def test_overrides_and_flag_precedence():
    cfg = resolve_config({"data": {"patients": 99}, "seed": 3}, seed=5, out_dir="x")
    assert cfg["data"]["patients"] == 99
    assert cfg["seed"] == 5
    assert cfg["out_dir"] == "x"
    assert cfg["data"]["seed"] == 5101
    explicit = resolve_config({"train": {"seed": 42}})
    assert explicit["train"]["seed"] == 42


def test_unknown_keys_and_type_errors():
    with pytest.raises(ConfigInvalid):
        resolve_config({"data": {"patinets": 10}})
    with pytest.raises(ConfigInvalid):
        resolve_config({"data": {"patients": "ten"}})
    with pytest.raises(ConfigInvalid):
        resolve_config({"graph": {"per_patient": 1}})
    with pytest.raises(ConfigInvalid):
        resolve_config({"data": {"lab_sizes": [1, 2]}})
    with pytest.raises(ConfigInvalid):
        resolve_config({"split": {"ratios": [0.5, 0.5]}})
    with pytest.raises(ConfigInvalid):
        resolve_config({"kge": {"lr": None}})
    with pytest.raises(ConfigInvalid):
        resolve_config({"data": {"hf_codes": [1, 2]}})
    resolve_config({"data": {"hf_codes": ["101"]}})
    resolve_config({"kg": {"relation_theta": 0.9}})


def test_paper_preset_merges():
    cfg = resolve_config({"preset": "paper"})
    assert cfg["data"]["patients"] == 7500
    assert cfg["kge"]["k"] == 1000
    assert cfg["graph"]["phi"] == DEFAULTS["graph"]["phi"]
    with pytest.raises(ConfigInvalid):
        resolve_config({"preset": "poster"})


def test_hash_ignores_out_dir_only():
    a = resolve_config(out_dir="one")
    b = resolve_config(out_dir="two")
    assert config_hash(a) == config_hash(b)
    c = resolve_config({"graph": {"phi": 0.25}})
    assert config_hash(c) != config_hash(a)


def test_load_config_file_handling(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"data": {"patients": 12}}')
    assert load_config(path)["data"]["patients"] == 12
    assert load_config(None)["data"]["patients"] == DEFAULTS["data"]["patients"]
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigInvalid):
        load_config(bad)
    array = tmp_path / "arr.json"
    array.write_text("[1, 2]")
    with pytest.raises(ConfigInvalid):
        load_config(array)
