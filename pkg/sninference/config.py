"""
Configuration loading.

Settings live in a TOML file, by default ``.sninference/config.toml`` in the
working directory (override with the ``SNINFERENCE_CONFIG`` environment
variable). A template is checked in as ``.sninference/config.toml.example``.
Without a file the built-in defaults of ``InferenceConfig`` apply.
"""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import replace
from pathlib import Path

from sninference.core import InferenceConfig
from sninference.errors import ConfigurationError

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "SNINFERENCE_CONFIG"
DEFAULT_CONFIG_PATH = Path(".sninference") / "config.toml"

# TOML key -> InferenceConfig field
CONFIG_KEYS = {
    "CLIP_GAMMA": "clip_gamma",
    "SEED": "rng_seed",
    "CONDITION_LIMIT": "condition_limit",
    "TABLE_DIR": "table_dir",
    "DEFAULT_REPS": "reps",
    "DEFAULT_GRID": "grid",
    "DEFAULT_LEVELS": "levels",
    "BOOTSTRAP_REPLICATES": "bootstrap_replicates",
}


def config_path(path=None):
    """
    Resolves which configuration file to read.

    Args:
        path: Explicit path (takes precedence)

    Returns:
        Path: Location of the configuration file (may not exist)
    """
    if path is not None:
        return Path(path)
    env_path = os.environ.get(CONFIG_ENV_VAR)
    if env_path:
        return Path(env_path)
    return DEFAULT_CONFIG_PATH


def load_config(path=None, **overrides):
    """
    Builds the inference configuration from the TOML file plus overrides.

    Args:
        path: Optional explicit configuration file
        **overrides: InferenceConfig fields to force (None values are ignored)

    Returns:
        InferenceConfig: Validated configuration

    Raises:
        ConfigurationError: Unreadable file, unknown key or invalid value
    """
    resolved = config_path(path)
    settings = {}

    if resolved.exists():
        try:
            with open(resolved, "rb") as handle:
                document = tomllib.load(handle)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot read configuration {resolved}: {exc}") from exc

        for key, value in document.items():
            if key not in CONFIG_KEYS:
                raise ConfigurationError(f"unknown configuration key {key!r} in {resolved}")
            settings[CONFIG_KEYS[key]] = tuple(value) if key == "DEFAULT_LEVELS" else value
        logger.debug("loaded %d settings from %s", len(settings), resolved)
    elif path is not None:
        raise ConfigurationError(f"configuration file {resolved} not found")

    try:
        config = InferenceConfig(**settings)
    except TypeError as exc:
        raise ConfigurationError(f"invalid configuration in {resolved}: {exc}") from exc

    forced = {name: value for name, value in overrides.items() if value is not None}
    if forced:
        config = replace(config, **forced)
    return config
