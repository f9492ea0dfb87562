import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from app.core.errors import ConfigError

logger = logging.getLogger(__name__)

EVALUATED_SISR_FACTORS = (2, 3, 4)


class DegradationKind(str, Enum):
    DEBLUR = "deblur"
    SISR = "sisr"


@dataclass(frozen=True, eq=False)
class Kernel:
    """Odd-sized, nonnegative, square convolution kernel summing to 1."""
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ConfigError(f"kernel must be square, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {w.shape[0]}")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ConfigError("kernel weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"kernel weights must sum to 1, got {w.sum():.15f}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def radius(self) -> int:
        return self.size // 2

    @property
    def key(self) -> tuple:
        return (self.size, self.weights.tobytes())

    @classmethod
    def delta(cls, size: int = 1) -> "Kernel":
        w = np.zeros((size, size))
        w[size // 2, size // 2] = 1.0
        return cls(w)


@dataclass(frozen=True)
class Degradation:
    kind: DegradationKind
    kernel: Kernel
    factor: int = 1
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.factor < 1:
            raise ConfigError(f"subsampling factor must be positive, got {self.factor}")
        if self.kind == DegradationKind.DEBLUR and self.factor != 1:
            raise ConfigError("deblur degradation requires factor 1")
        if self.kind == DegradationKind.SISR and self.factor not in EVALUATED_SISR_FACTORS:
            logger.warning("SISR factor %d is outside the evaluated set %s", self.factor, EVALUATED_SISR_FACTORS)
        if self.noise_sigma < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.noise_sigma}")

    def with_kernel(self, kernel: Kernel) -> "Degradation":
        return Degradation(self.kind, kernel, self.factor, self.noise_sigma)
