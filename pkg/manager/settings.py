import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional

from common.errors import ConfigurationError

logger = logging.getLogger("isopsm")

DEFAULT_CONFIG_PATH = Path(__file__).with_name("config.toml")


@lru_cache(maxsize=None)
def load_config(path: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
    """
    Load the TOML configuration. `ISOPSM_CONFIG` overrides the default location.
    """
    path = Path(path or os.environ.get("ISOPSM_CONFIG") or DEFAULT_CONFIG_PATH)
    try:
        with open(path, "rb") as f:
            config = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"invalid config file {path}: {e}")
    logger.debug(f"Loaded configuration from {path}: sections={sorted(config)}")
    return config


def setting(section: str, key: str, default: Any = None) -> Any:
    config = load_config()
    value = config.get(section, {}).get(key, default)
    if value is None:
        raise ConfigurationError(f"missing configuration value [{section}] {key}")
    return value
