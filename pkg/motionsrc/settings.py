import configparser
import logging
import os
from datetime import datetime
from typing import Dict, Optional, Tuple

from .exceptions import ConfigError

DEFAULT_SECTION = "motionsrc"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

logger = logging.getLogger(__name__)


###############################################################################
#                              CONFIG FILES                                   #
###############################################################################


def read_config_text(text: str, source: str = "<string>") -> Dict[str, str]:
    """
    Parse key=value text. Section headers are optional; keys from every
    section end up in one flat dict, later sections overriding earlier ones.
    """
    if not any(line.strip().startswith("[") for line in text.splitlines()):
        text = f"[{DEFAULT_SECTION}]\n" + text

    config = configparser.ConfigParser(interpolation=None)
    try:
        config.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"Couldn't parse config '{source}': {e}") from e

    flat: Dict[str, str] = {}
    for section in config.sections():
        for key, value in config[section].items():
            flat[key] = value.strip()
    return flat


def load_config(path: str) -> Dict[str, str]:
    """Read a config file from disk, or raise ConfigError if it isn't there."""
    if not path or not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return read_config_text(f.read(), source=path)


def write_config(path: str, values: Dict[str, object], section: str = DEFAULT_SECTION) -> None:
    config = configparser.ConfigParser(interpolation=None)
    config[section] = {k: str(v) for k, v in values.items()}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        config.write(f)


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"Not a boolean: {value!r}")


def parse_range(value: str) -> Tuple[float, float]:
    """'0.8, 1.2' -> (0.8, 1.2); a single number gives a degenerate range."""
    parts = [p.strip() for p in value.split(",") if p.strip()]
    try:
        numbers = [float(p) for p in parts]
    except ValueError as e:
        raise ConfigError(f"Not a numeric range: {value!r}") from e
    if len(numbers) == 1:
        return numbers[0], numbers[0]
    if len(numbers) != 2 or numbers[0] > numbers[1]:
        raise ConfigError(f"Range must be 'low, high': {value!r}")
    return numbers[0], numbers[1]


###############################################################################
#                                 LOGGING                                     #
###############################################################################


def setup_logging(log_dir: Optional[str] = None, level: str = "INFO") -> Optional[str]:
    """
    Console logging always; a timestamped session file too when log_dir is given.
    Returns the log file path (or None).
    """
    numeric_level = getattr(logging, level.upper(), logging.INFO)
    handlers = [logging.StreamHandler()]
    log_file = None
    if log_dir:
        try:
            os.makedirs(log_dir, exist_ok=True)
            tstamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            log_file = os.path.join(log_dir, f"session_{tstamp}.log")
            handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
        except OSError:
            log_file = None

    logging.basicConfig(level=numeric_level, format=LOG_FORMAT, handlers=handlers, force=True)
    logger.info("Logging set up (level=%s, file=%s)", level.upper(), log_file or "console only")
    return log_file
