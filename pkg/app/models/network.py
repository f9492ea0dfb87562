from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.episode import N_ACTIONS

PARAM_BUDGET = 450_000


class Architecture(BaseModel):
    """Layer description of the shared-encoder policy/value FCN.

    Also serialized into checkpoints, so a checkpoint can only be loaded into
    a network with an identical descriptor.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    in_channels: int = Field(1, ge=1)
    channels: int = Field(96, ge=1)
    kernel_size: int = Field(3, ge=1)
    dilations: tuple[int, ...] = (1, 2, 3, 4)
    head_channels: int = Field(96, ge=1)
    n_actions: int = Field(N_ACTIONS, ge=2)

    @field_validator("dilations", mode="before")
    @classmethod
    def split_dilations(cls, value):
        if isinstance(value, str):
            return tuple(int(item) for item in value.split(",") if item.strip())
        return value

    @classmethod
    def tiny(cls, channels: int = 4, dilations: tuple[int, ...] = (1, 2), n_actions: int = N_ACTIONS) -> "Architecture":
        return cls(channels=channels, head_channels=channels, dilations=dilations, n_actions=n_actions)
