"""
Colour-coded console logging for the CLI.

Every line goes to stderr so stdout and the emitted trace files stay clean.
Level is read from PP_LOG_LEVEL (debug | info | warning | error).
"""

import os
import sys
from datetime import datetime

from dotenv import load_dotenv

load_dotenv()

# Color codes
GREEN = "\033[92m"
RED = "\033[91m"
YELLOW = "\033[93m"
BLUE = "\033[94m"
MAGENTA = "\033[95m"
RESET = "\033[0m"
BOLD = "\033[1m"

LEVEL_ORDER = {"debug": 0, "info": 1, "success": 1, "test": 1, "header": 1, "warning": 2, "error": 3}


def _threshold() -> int:
    level = os.getenv("PP_LOG_LEVEL", "info").strip().lower()
    return LEVEL_ORDER.get(level, 1)


def _use_color(stream) -> bool:
    if os.getenv("NO_COLOR"):
        return False
    return hasattr(stream, "isatty") and stream.isatty()


def log(message: str, level: str = "info", stream=None) -> None:
    """Timestamped, colour-coded log line."""
    stream = stream if stream is not None else sys.stderr
    if LEVEL_ORDER.get(level, 1) < _threshold():
        return

    color = _use_color(stream)

    def paint(code: str, text: str) -> str:
        return f"{code}{text}{RESET}" if color else text

    timestamp = datetime.now().strftime("%H:%M:%S")
    if level == "success":
        line = paint(GREEN, f"✓ [{timestamp}] {message}")
    elif level == "error":
        line = paint(RED, f"✗ [{timestamp}] {message}")
    elif level == "warning":
        line = paint(YELLOW, f"⚠ [{timestamp}] {message}")
    elif level == "debug":
        line = f"[DEBUG] {message}"
    elif level == "test":
        bar = "=" * 70
        line = "\n".join(paint(MAGENTA + BOLD, s) for s in (bar, message, bar))
    elif level == "header":
        line = paint(BOLD + BLUE, message)
    else:
        line = paint(BLUE, f"ℹ [{timestamp}] {message}")
    print(line, file=stream, flush=True)
