from app.models.image import ImageGray, PatchSpec, PEAK
from app.models.degradation import Degradation, DegradationKind, Kernel
from app.models.episode import EpisodeConfig, TrajectoryBatch, ACTION_OFFSET, N_ACTIONS
from app.models.training import PPOConfig, EpochMetrics
from app.models.pnp import CGConfig, PnPConfig, PnPResult, SweepRow, TraceEntry
from app.models.network import Architecture, PARAM_BUDGET
from app.models.experiment import ExperimentConfig

__all__ = [
    "ImageGray",
    "PatchSpec",
    "PEAK",
    "Degradation",
    "DegradationKind",
    "Kernel",
    "EpisodeConfig",
    "TrajectoryBatch",
    "ACTION_OFFSET",
    "N_ACTIONS",
    "PPOConfig",
    "EpochMetrics",
    "CGConfig",
    "PnPConfig",
    "PnPResult",
    "SweepRow",
    "TraceEntry",
    "Architecture",
    "PARAM_BUDGET",
    "ExperimentConfig",
]
