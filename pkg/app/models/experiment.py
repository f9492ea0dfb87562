from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.degradation import DegradationKind
from app.models.episode import EpisodeConfig
from app.models.network import Architecture
from app.models.pnp import CGConfig
from app.models.training import PPOConfig


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ImageSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    extensions: list[str] = [".pgm", ".png"]

    @field_validator("extensions", mode="before")
    @classmethod
    def split_list(cls, value):
        return _split_list(value)


# low-resolution observations are noise-free unless asked otherwise
DEFAULT_NOISE_SIGMA = {DegradationKind.DEBLUR: 7.65, DegradationKind.SISR: 0.0}


class DegradationSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: DegradationKind = DegradationKind.DEBLUR
    kernel_size: int = Field(25, gt=0)
    sigma_true: float = Field(2.0, gt=0.0, description="sigma_blur or sigma_LR")
    sigma_est: float = Field(2.0, gt=0.0)
    factor: int = Field(1, ge=1)
    noise_sigma: Optional[float] = Field(None, ge=0.0, description="Defaults to 7.65 for deblur and 0 for sisr")
    kernel_file: Optional[str] = None

    def noise_for(self, kind: DegradationKind) -> float:
        if self.noise_sigma is not None:
            return self.noise_sigma
        return DEFAULT_NOISE_SIGMA[kind]


class PnPSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    iterations: int = Field(30, ge=1)
    sigma_start: float = Field(50.0, gt=0.0)
    sigma_end: Optional[float] = Field(None, gt=0.0, description="Defaults to max(noise_sigma, sigma_floor)")
    sigma_floor: float = Field(1.0, gt=0.0)
    lam: Optional[float] = Field(None, gt=0.0, description="Defaults to lambda_coeff * sigma^2")
    lambda_coeff: float = Field(0.23, gt=0.0)
    sigma_train: float = Field(25.0, gt=0.0)
    border_crop: bool = True


class ExperimentSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    train_dir: Optional[str] = None
    holdout_dir: Optional[str] = None
    eval_dir: Optional[str] = None
    output_dir: str = "runs/experiment"
    checkpoint: Optional[str] = None
    seed: int = Field(0, ge=0, lt=2**64)
    jobs: int = Field(0, ge=0)
    est_sigmas: list[float] = [2.2, 2.3, 2.4, 2.5, 2.6, 2.7, 2.8]
    factors: list[int] = [2, 3, 4]
    assert_trend: bool = False
    save_images: bool = True
    trace: bool = False

    @field_validator("est_sigmas", "factors", mode="before")
    @classmethod
    def split_list(cls, value):
        return _split_list(value)


class ExperimentConfig(BaseModel):
    """Every parameter of a run, grouped by config-file section."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    image: ImageSection = ImageSection()
    degradation: DegradationSection = DegradationSection()
    pnp: PnPSection = PnPSection()
    cg: CGConfig = CGConfig()
    episode: EpisodeConfig = EpisodeConfig()
    ppo: PPOConfig = PPOConfig()
    network: Architecture = Architecture()
    experiment: ExperimentSection = ExperimentSection()
