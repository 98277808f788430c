import logging
import os
from offgrid import config

app_logger = None

LOGGER_NAME = 'offgrid'


def setup_logging():
    global app_logger

    if app_logger is None:
        app_logger = logging.getLogger(LOGGER_NAME)
    app_logger.setLevel(logging.DEBUG if config.IS_DEBUG_MODE else logging.INFO)

    # Clear existing handlers to prevent duplicate messages if called multiple times
    if app_logger.hasHandlers():
        app_logger.handlers.clear()

    if config.IS_DEBUG_MODE:
        try:
            log_file_path = os.path.abspath(config.DEBUG_LOG_FILE)
            fh = logging.FileHandler(log_file_path, mode='w')
            fh.setLevel(logging.DEBUG)
            formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(threadName)s - %(funcName)s - %(message)s')
            fh.setFormatter(formatter)
            app_logger.addHandler(fh)
        except OSError as e:
            # Fall back to console debug output if the log file cannot be opened
            ch = logging.StreamHandler()
            ch.setLevel(logging.DEBUG)
            ch.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(threadName)s - %(funcName)s - %(message)s'))
            app_logger.addHandler(ch)
            app_logger.warning(f"File logger setup failed for {config.DEBUG_LOG_FILE}: {e}. Using console logging.")
    else:
        ch = logging.StreamHandler()
        ch.setLevel(logging.INFO)
        ch.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
        app_logger.addHandler(ch)
    app_logger.propagate = False
    return app_logger


def get_logger():
    return app_logger if app_logger is not None else logging.getLogger(LOGGER_NAME)


def log_debug(message, exc_info=False):
    if app_logger and config.IS_DEBUG_MODE:
        app_logger.debug(message, exc_info=exc_info)


def log_warning(message, exc_info=False):
    # Warnings reach the console even before setup_logging() ran.
    get_logger().warning(message, exc_info=exc_info)
