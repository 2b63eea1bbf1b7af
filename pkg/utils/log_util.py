import json
import logging
import logging.config
import os
import sys

from concurrent_log_handler import ConcurrentRotatingFileHandler

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(asctime)s.%(msecs)03d %(threadName)s %(name)s:%(lineno)d %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# third-party loggers that are chatty at INFO
QUIET_LOGGERS = ("ot", "urllib3", "prometheus_client")


def _level(value, default: int) -> int:
    if value is None or value == "":
        return default
    if isinstance(value, int):
        return value
    level = logging.getLevelName(str(value).upper())
    return level if isinstance(level, int) else default


def _file_handler(logs_dir: str, log_file: str, formatter: logging.Formatter) -> logging.Handler:
    os.makedirs(logs_dir, exist_ok=True)
    handler = ConcurrentRotatingFileHandler(
        os.path.join(logs_dir, log_file),
        maxBytes=2 ** 20,  # rotate at 1 MiB
        backupCount=10
    )
    handler.setFormatter(formatter)
    return handler


def _stream_handler(formatter: logging.Formatter) -> logging.Handler:
    # stdout carries the JSON summary of each command
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)
    return handler


def setup_logging(
        root_dir,
        default_log_config='py_logging.json',
        default_level=logging.INFO,
        env_key='LOG_CFG',
        log_file='atomics.log',
):
    """
    Configure the root logger for a CLI run.

    A dictConfig file named by `LOG_CFG` (or `<root_dir>/config/py_logging.json`)
    wins when present. Otherwise records go to a rotating file under
    `ATOMICS_LOG_DIR` (default `<root_dir>/logs`) and to stderr, at the level
    named by `ATOMICS_LOG_LEVEL`.
    """
    root_logger = logging.getLogger()
    # Force deterministic configuration
    if root_logger.handlers:
        root_logger.handlers.clear()

    path = os.getenv(env_key) or os.path.join(root_dir, 'config', default_log_config)
    if os.path.exists(path):
        with open(path, 'rt') as f:
            config = json.load(f)
        logging.config.dictConfig(config)
    else:
        formatter = logging.Formatter(LOG_FORMAT, DATE_FORMAT)
        logs_dir = os.getenv('ATOMICS_LOG_DIR') or os.path.join(root_dir, 'logs')
        root_logger.setLevel(_level(os.getenv('ATOMICS_LOG_LEVEL'), default_level))
        root_logger.addHandler(_file_handler(logs_dir, log_file, formatter))
        root_logger.addHandler(_stream_handler(formatter))
        for name in QUIET_LOGGERS:
            logging.getLogger(name).setLevel(logging.WARNING)

    logger.info(
        "Logging initialized from %s at level: %s", path,
        logging.getLevelName(root_logger.getEffectiveLevel())
    )


def set_module_log_level(module, log_level=logging.INFO):
    """`log_level` may be a number or a name such as 'debug'."""
    if module:
        level = _level(log_level, logging.INFO)
        logging.getLogger(module).setLevel(level)
        logger.info('Changed log level for %s to %s', module, logging.getLevelName(level))
