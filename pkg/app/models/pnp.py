import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.degradation import Degradation
from app.models.image import ImageGray


class CGConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(100, ge=1)
    strict: bool = False


class PnPConfig(BaseModel):
    """Solver-side description of a restoration run.

    `degradation_est` is the model used inside the solver and may differ from
    the degradation that produced the observation.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    iterations: int = Field(30, ge=1)
    sigma_start: float = Field(50.0, gt=0.0)
    sigma_end: float = Field(7.65, gt=0.0)
    lam: float = Field(gt=0.0)
    degradation_est: Degradation
    sigma_train: float = Field(25.0, gt=0.0)
    cg: CGConfig = CGConfig()

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.iterations >= 2 and not self.sigma_end < self.sigma_start:
            raise ValueError(f"sigma_end ({self.sigma_end}) must be below sigma_start ({self.sigma_start})")
        return self

    def sigmas(self) -> list[float]:
        from app.services.pnp import sigma_schedule
        if self.iterations == 1:
            return [self.sigma_start]
        return [sigma_schedule(k, self.iterations, self.sigma_start, self.sigma_end) for k in range(self.iterations)]

    def mus(self) -> list[float]:
        return [self.lam / s ** 2 for s in self.sigmas()]


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    sigma: float
    mu: float
    psnr: Optional[float] = None

    def csv_row(self) -> list[str]:
        psnr = "" if self.psnr is None else ("inf" if math.isinf(self.psnr) else f"{self.psnr:.6f}")
        return [str(self.iteration), f"{self.sigma:.6f}", f"{self.mu:.9g}", psnr]


TRACE_HEADER = ["iteration", "sigma", "mu", "psnr"]


@dataclass
class PnPResult:
    restored: ImageGray
    trace: list[TraceEntry] = field(default_factory=list)


@dataclass(frozen=True)
class SweepRow:
    sigma_est: float
    mean_psnr: float
    std_psnr: float
    n_images: int
    control: bool = False

    def csv_row(self) -> list[str]:
        return [f"{self.sigma_est:.4f}", f"{self.mean_psnr:.6f}", f"{self.std_psnr:.6f}", str(self.n_images)]

    @classmethod
    def from_values(cls, sigma_est: float, values: list[float], control: bool = False) -> "SweepRow":
        arr = np.asarray(values, dtype=np.float64)
        return cls(sigma_est, float(arr.mean()), float(arr.std()), len(values), control)


SWEEP_HEADER = ["sigma_est", "mean_psnr", "std_psnr", "n_images"]
