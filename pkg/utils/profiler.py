import time

from utils.logger import logger


def log_latency(label: str, start_time: float) -> float:
    """
    Logs the time elapsed since start_time with a custom label.

    Args:
        label (str): Description of the pipeline stage.
        start_time (float): Start time (from time.perf_counter()).

    Returns:
        float: Elapsed milliseconds.
    """
    duration_ms = (time.perf_counter() - start_time) * 1000
    logger.info(f"[LATENCY] {label}: {duration_ms:.2f} ms")
    return duration_ms
