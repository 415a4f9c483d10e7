import logging
import os

LOG_LEVEL_ENV = "EMOTION_DYNAMICS_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(module)s - %(message)s"

logger = logging.getLogger("emotion_dynamics")


def base_level() -> int:
    """Level named by EMOTION_DYNAMICS_LOG_LEVEL, INFO when unset or unknown."""
    name = os.environ.get(LOG_LEVEL_ENV, "INFO").strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def set_verbose(verbose: bool) -> None:
    """DEBUG when verbose, otherwise back to the environment's base level."""
    logger.setLevel(logging.DEBUG if verbose else base_level())


logger.setLevel(base_level())

if not logger.hasHandlers():
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
