"""
Main Application Entry Point
Damped SPDE Laboratory
"""
import os
import sys
import logging

import colorlog

# Add package to path
sys.path.insert(0, os.path.dirname(__file__))

from dampspde.config import config
from dampspde.cli import main as cli_main

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging():
    """Colored console output plus a plain log file"""
    os.makedirs(config.logging.directory, exist_ok=True)

    console = colorlog.StreamHandler()
    console.setFormatter(colorlog.ColoredFormatter('%(log_color)s' + LOG_FORMAT))

    logfile = logging.FileHandler(os.path.join(config.logging.directory, config.logging.filename))
    logfile.setFormatter(logging.Formatter(LOG_FORMAT))

    root = logging.getLogger()
    root.setLevel(config.logging.level.upper())
    root.addHandler(console)
    root.addHandler(logfile)


def main():
    """Main function"""
    configure_logging()
    logger = logging.getLogger(__name__)
    try:
        return cli_main()
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130


if __name__ == '__main__':
    sys.exit(main())
