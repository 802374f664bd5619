import os
import logging

from dotenv import load_dotenv

# =============================================================================
# CONFIG (environment overrides, PRIVBIAS_*)
# =============================================================================
# Values come from the process environment or a local .env file.
# Command-line flags in privbias.py take precedence over anything here.

load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}")


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{name} must be a number, got {raw!r}")


SEED = _env_int("PRIVBIAS_SEED", 42)
PARALLELISM = _env_int("PRIVBIAS_PARALLELISM", 1)

SCORER = os.getenv("PRIVBIAS_SCORER", "mock:uniform:1000")
MAX_IN_FLIGHT = _env_int("PRIVBIAS_MAX_IN_FLIGHT", 8)
RETRIES = _env_int("PRIVBIAS_RETRIES", 3)
RETRY_BACKOFF = _env_float("PRIVBIAS_RETRY_BACKOFF", 0.5)   # seconds, grows linearly per attempt
TIMEOUT = _env_float("PRIVBIAS_TIMEOUT", 60.0)              # seconds per HTTP request

OOV_MARKER = os.getenv("PRIVBIAS_OOV_MARKER", "<unk>")

LOG_LEVEL = os.getenv("PRIVBIAS_LOG_LEVEL", "INFO").upper()
SHOW_PROGRESS = os.getenv("PRIVBIAS_PROGRESS", "1").strip() not in ("0", "false", "no", "")

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(message)s"
LOG_DATEFMT = "%H:%M:%S"


def setup_logging(level: str = None) -> None:
    """Configure the root logger once for command-line runs."""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
    )
