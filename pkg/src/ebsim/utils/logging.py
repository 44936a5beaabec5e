"""
Logging configuration for ebsim.

Records carry the simulated time of the run in progress (``sim_time``) next to
the wall-clock timestamp, so model messages can be matched to trace events.
"""

import logging
import sys
from contextlib import contextmanager
from typing import Callable, Iterator, Optional

LOGGER_NAME = "ebsim"
NO_SIM_TIME = "-"

Clock = Callable[[], int]


class SimClockFilter(logging.Filter):
    """Stamps every record with the current simulated time in microseconds."""

    def __init__(self) -> None:
        super().__init__()
        self.clock: Optional[Clock] = None

    def filter(self, record: logging.LogRecord) -> bool:
        if self.clock is None:
            record.sim_time = NO_SIM_TIME
        else:
            record.sim_time = f"{self.clock() / 1e6:.3f}us"
        return True


_clock_filter = SimClockFilter()


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """
    Set up logging configuration for the application.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR)
        log_file: Also append records to this file

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(LOGGER_NAME)
    numeric = getattr(logging, level.upper())
    logger.setLevel(numeric)

    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    formatter = logging.Formatter(
        fmt="%(asctime)s - %(name)s - %(levelname)s - [%(sim_time)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    for handler in handlers:
        handler.setLevel(numeric)
        handler.setFormatter(formatter)
        handler.addFilter(_clock_filter)
        logger.addHandler(handler)

    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Get a logger instance.

    Args:
        name: Child logger name (optional)

    Returns:
        Logger instance
    """
    if name:
        return logging.getLogger(f"{LOGGER_NAME}.{name}")
    return logging.getLogger(LOGGER_NAME)


@contextmanager
def sim_clock(clock: Clock) -> Iterator[None]:
    """Stamp records with clock() while the block runs; restores the previous clock."""
    previous = _clock_filter.clock
    _clock_filter.clock = clock
    try:
        yield
    finally:
        _clock_filter.clock = previous
