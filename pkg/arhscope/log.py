"""Root logger setup for the CLI and small formatting helpers for log lines."""

import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path

from colorama import Fore, Style, just_fix_windows_console

# Chatty at INFO; only their warnings reach the console
QUIET_LIBS = ("pm4py", "graphviz")

# processName tells verification workers apart under --jobs
RECORD_FORMAT = "{asctime} | {levelname:8} | {processName} | {name} | {message}"
VERBOSE_FORMAT = (
    "{asctime} | {color}{levelname:8}{reset} | {processName} | {name} | {message}"
)


def format_counts(**counts: int) -> str:
    """Format non-zero counts into a compact string.

    >>> format_counts(verified=3, pruned=12, cached=0)
    '3 verified, 12 pruned'
    >>> format_counts(witnesses=1)
    '1 witness'
    >>> format_counts(verified=0)
    'nothing to do'
    """
    parts = []
    for k, v in counts.items():
        if not v:
            continue
        # Singularize nouns ("1 witnesses" -> "1 witness")
        if v == 1 and k.endswith("es") and k[-3] in "sx":
            label = k[:-2]
        elif v == 1 and k.endswith("s"):
            label = k[:-1]
        else:
            label = k
        parts.append(f"{v} {label}")
    return ", ".join(parts) if parts else "nothing to do"


def format_ratio(part: int, whole: int) -> str:
    """Render ``part/whole`` as a percentage with one decimal.

    >>> format_ratio(1, 4)
    '25.0%'
    >>> format_ratio(0, 0)
    'n/a'
    """
    if whole <= 0:
        return "n/a"
    return f"{100.0 * part / whole:.1f}%"


def clickable_path(file_path: Path | str, display_name: str | None = None) -> str:
    """Create a clickable terminal hyperlink for a file path.

    Uses OSC 8 escape sequences understood by most modern terminals.
    Falls back to plain text when ``NO_COLOR`` is set.

    Args:
        file_path: Path object or string to make clickable
        display_name: Optional display text (defaults to filename only)
    """
    if os.environ.get("NO_COLOR"):
        return display_name or Path(file_path).name

    path = Path(file_path)
    absolute_path = path.resolve()
    text = display_name if display_name is not None else path.name

    # OSC 8 format: \033]8;;file://ABSOLUTE_PATH\033\\TEXT\033]8;;\033\\
    return f"\033]8;;file://{absolute_path}\033\\{text}\033]8;;\033\\"


def configure_logging(
    level: int = logging.INFO,
    file_path: Path | str | None = None,
    quiet_libs: Sequence[str] = QUIET_LIBS,
) -> None:
    """Console logging at ``level``, plus a DEBUG log file when ``file_path`` is set.

    Replaces any handlers already on the root logger, including the ones
    verification workers inherit.
    """
    just_fix_windows_console()
    console = logging.StreamHandler(sys.stdout)
    console.setLevel(level)
    console.setFormatter(LevelFormatter(verbose=level <= logging.DEBUG))
    handlers: list[logging.Handler] = [console]

    if file_path:
        file_path = Path(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(file_path, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(RECORD_FORMAT, style="{"))
        handlers.append(file_handler)

    for lib in quiet_libs:
        logging.getLogger(lib).setLevel(logging.WARNING)

    root_level = logging.DEBUG if file_path else level
    logging.basicConfig(level=root_level, handlers=handlers, force=True)


def close_root_logging() -> None:
    """Close and remove all handlers attached to the root logger."""
    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        handler.close()
        root_logger.removeHandler(handler)


class LevelFormatter(logging.Formatter):
    """Bare messages for normal runs, full records under ``--debug``.

    Warnings and errors are always colored, other levels only when verbose.
    ``NO_COLOR`` turns coloring off.
    """

    COLORS = {
        logging.DEBUG: Fore.CYAN,
        logging.INFO: Fore.GREEN,
        logging.WARNING: Fore.YELLOW,
        logging.ERROR: Fore.RED,
        logging.CRITICAL: Style.BRIGHT + Fore.RED,
    }

    def __init__(self, verbose: bool = False) -> None:
        fmt = VERBOSE_FORMAT if verbose else "{color}{message}{reset}"
        super().__init__(fmt, style="{", datefmt="%H:%M:%S")
        self.verbose = verbose

    def format(self, record: logging.LogRecord) -> str:
        color = self.COLORS.get(record.levelno, "")
        if os.environ.get("NO_COLOR") or (
            not self.verbose and record.levelno < logging.WARNING
        ):
            color = ""
        record.color = color
        record.reset = Style.RESET_ALL if color else ""
        return super().format(record)
