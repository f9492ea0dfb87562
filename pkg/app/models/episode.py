from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import DataError, ShapeError

# Residual actions -13..13 with integer gradation
ACTION_OFFSET = 13
N_ACTIONS = 2 * ACTION_OFFSET + 1


class EpisodeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = Field(5, ge=1, description="Termination step T")
    gamma: float = Field(0.95, gt=0.0, le=1.0)


@dataclass
class TrajectoryBatch:
    """Per-pixel rollouts of one or more images under a sampling policy.

    Arrays are stacked over time first, then over the image batch:
    states (T+1, B, H, W), actions/rewards/old_probs/values (T, B, H, W).
    """
    states: np.ndarray
    actions: np.ndarray
    rewards: Optional[np.ndarray]
    old_probs: np.ndarray
    values: np.ndarray
    clean: Optional[np.ndarray] = None

    def __post_init__(self):
        steps = self.actions.shape[0]
        if self.states.shape[0] != steps + 1:
            raise ShapeError(f"expected {steps + 1} states for {steps} actions, got {self.states.shape[0]}")
        for name in ("old_probs", "values"):
            if getattr(self, name).shape != self.actions.shape:
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != actions {self.actions.shape}")
        if self.rewards is None:
            raise DataError("trajectory rewards need the clean training target")
        if self.rewards.shape != self.actions.shape:
            raise ShapeError(f"rewards shape {self.rewards.shape} != actions {self.actions.shape}")

    @property
    def steps(self) -> int:
        return self.actions.shape[0]

    def log_probability(self) -> np.ndarray:
        """Log-probability of each pixel's whole action trajectory."""
        return np.log(self.old_probs).sum(axis=0)

