import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from sasv_eval.sasv_eval import EXIT_IO, logging_options, main

LOG_FILE_NAME = 'sasv_log.txt'


def setup_logger(log_dir: Path, console_level: int = logging.INFO) -> Path:
    """Full DEBUG log to a rotating file under ``log_dir``, ``console_level`` and up to the terminal."""

    logger = logging.getLogger()

    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / LOG_FILE_NAME

    logger.setLevel(logging.DEBUG)

    # a second call replaces the handlers of the first
    for handler in [h for h in logger.handlers if h.get_name() in ('sasv_file', 'sasv_console')]:
        logger.removeHandler(handler)
        handler.close()

    file_formatter = logging.Formatter('[%(asctime)s]%(name)s:%(levelname)s:%(message)s', datefmt='%Y-%m-%d %H:%M:%S')
    shell_formatter = logging.Formatter('%(levelname)s: %(message)s')

    file_handler = RotatingFileHandler(log_path, maxBytes=5_242_880, backupCount=3, encoding='utf-8')
    file_handler.set_name('sasv_file')
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(file_formatter)

    stream_handler = logging.StreamHandler()
    stream_handler.set_name('sasv_console')
    stream_handler.setLevel(console_level)
    stream_handler.setFormatter(shell_formatter)

    logger.addHandler(file_handler)
    logger.addHandler(stream_handler)

    return log_path

if __name__ == "__main__":

    log_dir, console_level = logging_options(sys.argv[1:])
    setup_logger(log_dir, console_level)

    try:
        sys.exit(main())

    except Exception:
        logging.exception("The application crashed due to an unhandled exception:")
        sys.exit(EXIT_IO)
