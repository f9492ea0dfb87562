import logging
from typing import Optional

from app.core.config import settings

_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    """Install the root handler once; later calls only adjust the level."""
    global _configured
    level = (level or settings.LOG_LEVEL).upper()
    if not _configured:
        logging.basicConfig(level=level, format=settings.LOG_FORMAT)
        _configured = True
    logging.getLogger().setLevel(level)
