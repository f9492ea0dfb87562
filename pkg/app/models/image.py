from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

from app.core.errors import NumericalFault, ShapeError

PEAK = 255.0


@dataclass(frozen=True, eq=False)
class ImageGray:
    """Grayscale intensity field, nominal range [0, 255], stored as float64.

    The backing array is copied and made read-only, so an instance is an
    immutable value once constructed.
    """
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ShapeError(f"ImageGray needs a 2-D array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"ImageGray needs positive dimensions, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericalFault("ImageGray values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def clipped(self) -> "ImageGray":
        return ImageGray(np.clip(self.data, 0.0, PEAK))

    def array(self) -> np.ndarray:
        """Writable copy of the pixel data."""
        return self.data.copy()


class PatchSpec(BaseModel):
    size: int = Field(gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
