from __future__ import annotations

import logging

from rich.console import Console
from rich.logging import RichHandler

LOG_FORMAT = "%(name)s: %(message)s"


def configure_logging(verbose: bool = False, debug: bool = False, level: str = "WARNING") -> None:
    if debug:
        chosen = logging.DEBUG
    elif verbose:
        chosen = logging.INFO
    else:
        chosen = logging.getLevelName(level.upper())
        if not isinstance(chosen, int):
            chosen = logging.WARNING
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=debug,
        rich_tracebacks=debug,
        markup=False,
    )
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger("safecase")
    root.handlers[:] = [handler]
    root.setLevel(chosen)
    root.propagate = False
