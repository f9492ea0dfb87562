import logging
import threading
from typing import Optional

from app.core.config import settings
from app.core.errors import DataError
from app.models.episode import EpisodeConfig
from app.services.denoiser import DRLDenoiser
from app.services.network import load_checkpoint

logger = logging.getLogger(__name__)


class ModelStore:
    """Lazily loads the service denoiser from settings.CHECKPOINT_PATH once."""

    def __init__(self, checkpoint_path: Optional[str] = None):
        self.checkpoint_path = checkpoint_path
        self._denoiser: Optional[DRLDenoiser] = None
        self._lock = threading.Lock()

    @property
    def path(self) -> str:
        return self.checkpoint_path if self.checkpoint_path is not None else settings.CHECKPOINT_PATH

    def get(self) -> DRLDenoiser:
        with self._lock:
            if self._denoiser is None:
                if not self.path:
                    raise DataError("no denoiser checkpoint configured (REPNP_CHECKPOINT)")
                net = load_checkpoint(self.path)
                net.eval()
                self._denoiser = DRLDenoiser(net, EpisodeConfig())
                logger.info("loaded denoiser from %s", self.path)
            return self._denoiser

    def reset(self):
        with self._lock:
            self._denoiser = None


# Singleton instance
model_store = ModelStore()
