import logging
import sys
import time

import coloredlogs

from dplsvm.config import COLOR_LOG, LOG_LEVEL

_log_format = "%(asctime)s %(levelname)-7s %(module)s: %(message)s"
_date_format = "%Y-%m-%dT%H:%M:%SZ"


def _get_stderr_handler():
    handler = logging.StreamHandler(sys.stderr)
    formatter = logging.Formatter(_log_format, _date_format)
    formatter.converter = time.gmtime
    handler.setFormatter(formatter)
    return handler


def _get_logger(name, level=LOG_LEVEL, color=COLOR_LOG):
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    if color and sys.stderr.isatty():
        coloredlogs.install(
            level=level, logger=logger, fmt=_log_format, datefmt=_date_format, stream=sys.stderr
        )
    elif not logger.handlers:
        logger.addHandler(_get_stderr_handler())

    return logger


def set_level(level: str):
    """Used by the CLI's --log-level; handlers stay at NOTSET so the logger level decides."""
    LOG.setLevel(level.upper())
    for handler in LOG.handlers:
        handler.setLevel(logging.NOTSET)


logging.Logger.d = logging.Logger.debug
logging.Logger.i = logging.Logger.info

LOG = _get_logger("dplsvm")
