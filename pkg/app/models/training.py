from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class PPOConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    clip_epsilon: float = Field(0.2, gt=0.0, lt=1.0)
    entropy_coeff: float = Field(0.01, ge=0.0)
    gamma: float = Field(0.95, gt=0.0, le=1.0)
    epochs_per_batch: int = Field(4, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-4, gt=0.0)
    total_epochs: int = Field(600, ge=1)
    sigma_train: float = Field(25.0, gt=0.0)

    # Data pipeline
    patch_size: int = Field(70, gt=0)
    augment: bool = True

    # Loss shaping
    reward_scale: float = Field(1.0 / 255.0, gt=0.0)
    value_coeff: float = Field(1.0, ge=0.0)
    entropy_floor: float = Field(0.01, ge=0.0, description="Collapse guard, nats")

    # Bookkeeping
    checkpoint_every: int = Field(50, ge=0)
    holdout_every: int = Field(1, ge=0)
    holdout_patches: int = Field(8, ge=1)


class EpochMetrics(BaseModel):
    epoch: int
    mean_reward: float
    entropy: float
    value_loss: float
    holdout_psnr: Optional[float] = None

    def csv_row(self) -> list[str]:
        psnr = "" if self.holdout_psnr is None else f"{self.holdout_psnr:.6f}"
        return [str(self.epoch), f"{self.mean_reward:.6f}", f"{self.entropy:.6f}", f"{self.value_loss:.6f}", psnr]


METRICS_HEADER = ["epoch", "mean_reward", "entropy", "value_loss", "holdout_psnr"]
