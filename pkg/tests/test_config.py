"""Tests for configuration loading."""

import pytest

from sninference.config import CONFIG_ENV_VAR, load_config
from sninference.errors import ConfigurationError


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)


def write_config(directory, text):
    path = directory / "config.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_without_file():
    config = load_config()
    assert config.rng_seed == 20130101
    assert config.table_dir == "tables"


def test_default_location(tmp_path):
    (tmp_path / ".sninference").mkdir()
    write_config(tmp_path / ".sninference", "SEED = 99\n")
    assert load_config().rng_seed == 99


def test_reads_keys(tmp_path):
    path = write_config(tmp_path, 'SEED = 7\nTABLE_DIR = "cv"\nDEFAULT_LEVELS = [0.9, 0.5]\nCLIP_GAMMA = 0.2\n')
    config = load_config(path)
    assert config.rng_seed == 7
    assert config.table_dir == "cv"
    assert config.levels == (0.5, 0.9)
    assert config.clip_gamma == 0.2


def test_environment_variable(tmp_path, monkeypatch):
    path = write_config(tmp_path, "BOOTSTRAP_REPLICATES = 250\n")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    assert load_config().bootstrap_replicates == 250


def test_overrides_win_and_none_is_ignored(tmp_path):
    path = write_config(tmp_path, "SEED = 7\n")
    assert load_config(path, rng_seed=5).rng_seed == 5
    assert load_config(path, rng_seed=None).rng_seed == 7


def test_unknown_key(tmp_path):
    path = write_config(tmp_path, "SEEDS = 7\n")
    with pytest.raises(ConfigurationError, match="SEEDS"):
        load_config(path)


def test_invalid_value(tmp_path):
    path = write_config(tmp_path, "CLIP_GAMMA = 0.7\n")
    with pytest.raises(ConfigurationError, match="clip_gamma"):
        load_config(path)


def test_malformed_file(tmp_path):
    path = write_config(tmp_path, "SEED = = 7\n")
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(path)


def test_explicit_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "missing.toml")
