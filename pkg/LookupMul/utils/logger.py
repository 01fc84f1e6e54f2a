# LookupMul/utils/logger.py

import logging
from logging.handlers import RotatingFileHandler
import sys
import os

from LookupMul.config import Experiment

LOG_DIR = os.path.abspath(Experiment.LOG_DIR)
LOG_FILE = os.path.join(LOG_DIR, 'lookupmul.log')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _build_logger(name: str, quiet: bool) -> logging.Logger:
    log = logging.getLogger(name)
    if log.handlers:
        return log
    os.makedirs(LOG_DIR, exist_ok=True)
    log.setLevel(logging.DEBUG)
    formatter = logging.Formatter(LOG_FORMAT)

    # the file always gets INFO, the console only warnings when QUIET is set
    file_handler = RotatingFileHandler(LOG_FILE, maxBytes=10 * 1024 * 1024, backupCount=5,
                                       encoding="utf-8")
    file_handler.setFormatter(formatter)
    file_handler.setLevel(logging.INFO)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(logging.WARNING if quiet else logging.INFO)

    log.addHandler(file_handler)
    log.addHandler(console_handler)
    log.propagate = False
    return log


logger = _build_logger('LookupMul', Experiment.QUIET)

__all__ = ['logger', 'LOG_FILE']
