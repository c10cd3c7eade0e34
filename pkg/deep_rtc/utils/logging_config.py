import logging
import os
import time
from functools import wraps
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def configure_logging(log_file: Optional[str] = None, level: int = logging.INFO) -> None:
    """
    Configure root logging with a console handler and, optionally, a log file
    """
    handlers = [logging.StreamHandler()]
    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


def log_duration(label: str):
    """
    Decorator logging how long the wrapped call took
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                logger.info(f"{label} finished in {time.perf_counter() - start:.2f}s")
        return wrapper
    return decorator
