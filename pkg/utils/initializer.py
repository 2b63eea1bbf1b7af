import logging
import os

from dotenv import load_dotenv, find_dotenv

from utils.log_util import setup_logging

logger = logging.getLogger(__name__)


def init(app_name: str | None = None, root_dir: str | None = None) -> str:
    """
    Load `.env` (when present) and configure logging.

    Returns the root directory used for `config/` and `logs/`.
    """
    dotenv_path = find_dotenv(usecwd=True)
    loaded = False
    if dotenv_path:
        loaded = load_dotenv(dotenv_path)
    if root_dir is None:
        root_dir = os.path.dirname(dotenv_path) if dotenv_path else os.getcwd()

    setup_logging(root_dir)
    if not loaded:
        logger.debug("No .env file found, using process environment only")
    logger.info('Initializing %s..', app_name or '')
    return root_dir


def get_env(key, default=None, throw=True):
    val = os.getenv(key, default)
    if val is None:
        if throw and default is None:
            raise RuntimeError(f'env variable "{key}" not found. Please check')
        val = default
    return val


def get_int_env(key, default: int) -> int:
    val = get_env(key, default, throw=False)
    try:
        return int(val)
    except (TypeError, ValueError) as e:
        raise RuntimeError(f'env variable "{key}" must be an integer, got {val!r}') from e
