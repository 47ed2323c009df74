"""Configuration constants and path helpers for arhscope."""

import logging
import os
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

logger = logging.getLogger(__name__)

# Search bounds used when neither the model nor the CLI sets them
DEFAULT_MAX_SESSIONS = 1
DEFAULT_MAX_TERM_DEPTH = 3
DEFAULT_MAX_TRACE_LEN = 16

# Pseudo-actors that appear in witness traces but are not model components
ADVERSARY = "Adversary"
PKI = "PKI"
ADVERSARY_NONCE = "adv"
SESSION_MARK = "#"

ACTIVITY_SEPARATOR = ":"
SPOOF_MARK = "!"
ESCAPE_CHAR = "\\"

DEFAULT_DELTA_T = 1.0
DEFAULT_ACTIVITY_FILTER = ("init", "pki", "tick")
DEFAULT_DEPENDENCY_THRESHOLD = 0.0

# XES timestamps are this epoch plus the event's timestamp in seconds
XES_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)

STORE_DIR = "store"
STORE_INDEX = "store.json"
HASSE_DIR = "hasse"
ARH_DIR = "arh"
MINING_DIR = "mining"
REPORT_NAME = "report"

LOG_FORMATS = ("csv", "xes", "dot")

CACHE_ENV_VAR = "ARHSCOPE_CACHE"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MODEL = 2
EXIT_VERIFICATION = 3


def _is_development_mode() -> bool:
    """Check if running from the arhscope source tree."""
    pyproject = Path.cwd() / "pyproject.toml"
    if not pyproject.exists():
        return False
    try:
        return 'name = "arhscope"' in pyproject.read_text()
    except OSError:
        return False


def get_cache_dir() -> Path:
    """Get the verdict cache directory.

    ``$ARHSCOPE_CACHE`` wins. Development mode (pyproject.toml in cwd):
    ./.arhscope-cache. Otherwise: ~/.cache/arhscope
    """
    override = os.environ.get(CACHE_ENV_VAR)
    if override:
        return Path(override).expanduser()
    if _is_development_mode():
        return Path.cwd() / ".arhscope-cache"
    return Path.home() / ".cache" / "arhscope"


def bundled_model_path() -> Path:
    """Return the path of the bundled BMS case-study model."""
    return Path(str(resources.files("arhscope.data").joinpath("bms.json")))
