"""Package logger with a rich handler."""

import logging

try:
    from rich.console import Console
    from rich.logging import RichHandler

    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False

logger = logging.getLogger("sac_pde")
logger.addHandler(logging.NullHandler())


def configure_logging(quiet: bool = False, verbose: bool = False) -> logging.Logger:
    """Route package logs to stderr; WARNING when quiet, DEBUG when verbose."""
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    if RICH_AVAILABLE:
        handler: logging.Handler = RichHandler(
            console=Console(stderr=True), show_path=False, rich_tracebacks=False
        )
        handler.setFormatter(logging.Formatter("%(message)s"))
    else:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))

    if quiet:
        level = logging.WARNING
    elif verbose:
        level = logging.DEBUG
    else:
        level = logging.INFO
    logger.setLevel(level)
    handler.setLevel(level)
    logger.addHandler(handler)
    logger.propagate = False
    return logger
