"""
Logging for epflow.

Every module logs below the "Epflow" root through get_logger. The console
handler writes to stderr (stdout is reserved for the paths of written CSV
files); a midnight-rotating file handler is added when a log file is set.
"""

import sys
import logging
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path
from typing import List, Optional, TextIO

from app.config import settings

ROOT_LOGGER_NAME = "Epflow"

FILE_FORMAT = '%(asctime)s | %(levelname)-8s | %(name)s:%(lineno)d | %(message)s'
CONSOLE_FORMAT = '%(asctime)s | %(levelname)-8s | %(name)s | %(message)s'

# ANSI escape per level name
LEVEL_COLORS = {
    'DEBUG': '\033[36m',
    'INFO': '\033[32m',
    'WARNING': '\033[33m',
    'ERROR': '\033[31m',
    'CRITICAL': '\033[35m',
}
RESET = '\033[0m'


class ColoredFormatter(logging.Formatter):
    """Colors the level name; plain output when the stream is not a terminal."""

    def __init__(self, stream: TextIO, **kwargs):
        super().__init__(**kwargs)
        self.use_color = hasattr(stream, "isatty") and stream.isatty()

    def format(self, record: logging.LogRecord) -> str:
        color = LEVEL_COLORS.get(record.levelname)
        if not (self.use_color and color):
            return super().format(record)
        tinted = logging.makeLogRecord(record.__dict__)
        tinted.levelname = f"{color}{record.levelname}{RESET}"
        return super().format(tinted)


def _console_handler(level: int, stream: TextIO = sys.stderr) -> logging.Handler:
    handler = logging.StreamHandler(stream)
    handler.setLevel(level)
    handler.setFormatter(ColoredFormatter(stream, fmt=CONSOLE_FORMAT, datefmt='%H:%M:%S'))
    return handler


def _file_handler(path: str, level: int) -> Optional[logging.Handler]:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        handler = TimedRotatingFileHandler(
            filename=path,
            when='midnight',
            backupCount=settings.LOG_BACKUP_COUNT,
            encoding='utf-8',
        )
    except OSError as e:
        print(f"epflow: file logging to {path} disabled ({e})", file=sys.stderr)
        return None
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt=FILE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
    return handler


def setup_logging(
    log_level: Optional[str] = None,
    log_file: Optional[str] = None,
    console_output: bool = True
) -> logging.Logger:
    """
    Configure the Epflow logger hierarchy. Safe to call more than once.

    Args:
        log_level: Level name; EPFLOW_LOG_LEVEL when omitted
        log_file: Rotating log file; EPFLOW_LOG_FILE when omitted
        console_output: Attach the stderr handler

    Returns:
        The root Epflow logger
    """
    level = getattr(logging, (log_level or settings.LOG_LEVEL).upper(), logging.INFO)
    log_file = log_file or settings.LOG_FILE

    handlers: List[logging.Handler] = []
    if log_file:
        file_handler = _file_handler(log_file, level)
        if file_handler is not None:
            handlers.append(file_handler)
    if console_output:
        handlers.append(_console_handler(level))

    root = logging.getLogger(ROOT_LOGGER_NAME)
    root.setLevel(level)
    root.propagate = False
    root.handlers = handlers

    # EpflowWarning and friends go through the same handlers
    logging.captureWarnings(True)
    logging.getLogger("py.warnings").handlers = list(handlers)
    return root


def get_logger(name: str) -> logging.Logger:
    """Module logger below the Epflow root (pass __name__)."""
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


def log_exception(logger: logging.Logger, message: str, exc_info=True):
    logger.error(message, exc_info=exc_info)


def log_eigensolve(logger: logging.Logger, alpha: float, eps: float, lam: float,
                   residual: float, iterations: int, n_nodes: int):
    """
    One line per converged leading eigenpair.

    Args:
        alpha: Deformation parameter
        eps: Noise strength
        lam: Eigenvalue
        residual: Relative eigen-residual at exit
        iterations: Shift-inverted iterations used
        n_nodes: Interior grid nodes
    """
    logger.info(
        f"alpha={alpha:.4g} eps={eps:.4g}: lambda={lam:.10g} "
        f"(residual {residual:.2e}, {iterations} iterations, {n_nodes} nodes)"
    )


def log_ensemble(logger: logging.Logger, n_paths: int, horizon: float, dt: float,
                 threads: int, duration: float):
    logger.info(
        f"Simulated {n_paths} paths to t={horizon:g} (dt={dt:g}) on {threads} threads in {duration:.2f}s"
    )
