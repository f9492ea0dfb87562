"""PPO-Clip with entropy bonus and value regression for the pixel-wise denoiser."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from app.core.errors import ConfigError, DataError, NumericalFault, ShapeError
from app.models.episode import EpisodeConfig, TrajectoryBatch
from app.models.image import PEAK, ImageGray, PatchSpec
from app.models.training import METRICS_HEADER, EpochMetrics, PPOConfig
from app.services.denoiser import collect_trajectories, greedy_batch, rewards_to_go
from app.services.image import add_gaussian_noise, augment_dihedral, load_dataset, psnr, random_patch
from app.services.network import AdamOptimizer, PolicyValueNet, save_checkpoint

logger = logging.getLogger(__name__)

Array = Union[np.ndarray, torch.Tensor]


def advantage(returns: np.ndarray, values: np.ndarray) -> np.ndarray:
    """A = R - V, not standardized."""
    returns = np.asarray(returns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if returns.shape != values.shape:
        raise ShapeError(f"returns {returns.shape} and values {values.shape} differ")
    return returns - values


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, epsilon: float) -> torch.Tensor:
    return torch.minimum(ratio * adv, torch.clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv)


def _tensors(*values: Array) -> Tuple[bool, List[torch.Tensor]]:
    as_numpy = not any(isinstance(v, torch.Tensor) for v in values)
    return as_numpy, [v if isinstance(v, torch.Tensor) else torch.as_tensor(v, dtype=torch.float64) for v in values]


def ppo_clip_objective(new_prob: Array, old_prob: Array, adv: Array, epsilon: float) -> Array:
    as_numpy, (new_prob, old_prob, adv) = _tensors(new_prob, old_prob, adv)
    if (old_prob <= 0).any():
        raise NumericalFault("old action probability is zero, ratio undefined")
    out = clipped_surrogate(new_prob / old_prob, adv, epsilon)
    return out.numpy() if as_numpy else out


def policy_entropy(policy: Array, axis: int = 1) -> Array:
    """Entropy in nats along the action axis, with 0 ln 0 = 0."""
    as_numpy, (policy,) = _tensors(policy)
    out = -torch.special.xlogy(policy, policy).sum(dim=axis)
    return out.numpy() if as_numpy else out


def value_loss(v_pred: Array, returns: Array) -> Array:
    as_numpy, (v_pred, returns) = _tensors(v_pred, returns)
    if v_pred.shape != returns.shape:
        raise ShapeError(f"value predictions {tuple(v_pred.shape)} and returns {tuple(returns.shape)} differ")
    out = ((v_pred - returns) ** 2).mean()
    return float(out) if as_numpy else out


@dataclass
class StepLoss:
    loss: torch.Tensor
    surrogate: float
    entropy: float
    value_loss: float


def ppo_loss(
    net: PolicyValueNet,
    states: np.ndarray,
    actions: np.ndarray,
    old_probs: np.ndarray,
    adv: np.ndarray,
    returns: np.ndarray,
    cfg: PPOConfig,
) -> StepLoss:
    """Joint loss for one time step: -(clip objective + eta entropy) + c_v value MSE."""
    dtype = net.dtype
    x = torch.as_tensor(states / PEAK, dtype=dtype)[:, None]
    logits, v = net(x)
    log_p = torch.log_softmax(logits, dim=1)
    a = torch.as_tensor(actions, dtype=torch.long)[:, None]
    new_log_p = log_p.gather(1, a)[:, 0]
    old_log_p = torch.as_tensor(np.log(old_probs), dtype=dtype)
    ratio = torch.exp(new_log_p - old_log_p)
    surrogate = clipped_surrogate(ratio, torch.as_tensor(adv, dtype=dtype), cfg.clip_epsilon).mean()
    # entropy from log-probs keeps the gradient finite where p underflows
    entropy = -(log_p.exp() * log_p).sum(dim=1).mean()
    v_loss = value_loss(v, torch.as_tensor(returns, dtype=dtype))
    loss = -(surrogate + cfg.entropy_coeff * entropy) + cfg.value_coeff * v_loss
    if not torch.isfinite(loss):
        raise NumericalFault(f"non-finite PPO loss (surrogate {surrogate.item()}, value loss {v_loss.item()})")
    return StepLoss(loss, surrogate.item(), entropy.item(), v_loss.item())


@dataclass
class TrainingResult:
    net: PolicyValueNet
    metrics: List[EpochMetrics] = field(default_factory=list)
    best_holdout_psnr: Optional[float] = None


class MetricsLog:
    """Append-only CSV of per-epoch metrics."""

    def __init__(self, path: Optional[Path]):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(METRICS_HEADER)

    def append(self, row: EpochMetrics):
        if self.path is None:
            return
        with open(self.path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(row.csv_row())


class PPOTrainer:
    def __init__(
        self,
        net: PolicyValueNet,
        images: Sequence[ImageGray],
        cfg: PPOConfig = PPOConfig(),
        episode: EpisodeConfig = EpisodeConfig(),
        seed: int = 0,
        holdout: Optional[Sequence[ImageGray]] = None,
        output_dir: Optional[Union[str, Path]] = None,
    ):
        if not images:
            raise DataError("training set is empty")
        too_small = [img.shape for img in images if min(img.shape) < cfg.patch_size]
        if too_small:
            raise DataError(f"{len(too_small)} training images are smaller than patch size {cfg.patch_size}")
        self.net = net
        self.images = list(images)
        self.cfg = cfg
        if not math.isclose(cfg.gamma, episode.gamma):
            raise ConfigError(f"PPO gamma {cfg.gamma} and episode gamma {episode.gamma} disagree")
        self.episode = episode
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.optimizer = AdamOptimizer(net, lr=cfg.learning_rate)
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.log = MetricsLog(self.output_dir / "metrics.csv" if self.output_dir else None)
        self.holdout_clean, self.holdout_noisy = self._build_holdout(holdout)

    # Data

    def _noisy_patches(self, sources: Sequence[ImageGray], count: int, rng: np.random.Generator, augment: bool):
        clean, noisy = [], []
        for _ in range(count):
            img = sources[int(rng.integers(len(sources)))]
            patch = random_patch(img, PatchSpec(size=self.cfg.patch_size, seed=int(rng.integers(2**63))))
            if augment:
                patch = augment_dihedral(patch, int(rng.integers(8)))
            clean.append(patch.data)
            noisy.append(add_gaussian_noise(patch, self.cfg.sigma_train, int(rng.integers(2**63))).data)
        return np.stack(clean), np.stack(noisy)

    def _build_holdout(self, holdout: Optional[Sequence[ImageGray]]):
        if self.cfg.holdout_every == 0:
            return None, None
        sources = [img for img in (holdout or self.images) if min(img.shape) >= self.cfg.patch_size]
        if not sources:
            raise DataError(f"no held-out image fits patch size {self.cfg.patch_size}")
        # reserved stream so the held-out set does not depend on training draws
        rng = np.random.default_rng([self.seed, 1])
        return self._noisy_patches(sources, self.cfg.holdout_patches, rng, augment=False)

    def holdout_psnr(self) -> Optional[float]:
        if self.holdout_clean is None:
            return None
        self.net.eval()
        restored = greedy_batch(self.net, self.holdout_noisy, self.episode.steps)
        values = [psnr(ImageGray(c), ImageGray(r)) for c, r in zip(self.holdout_clean, restored)]
        return float(np.mean(values))

    # Optimization

    def collect(self) -> TrajectoryBatch:
        clean, noisy = self._noisy_patches(self.images, self.cfg.batch_size, self.rng, self.cfg.augment)
        self.net.eval()
        return collect_trajectories(self.net, noisy, clean, self.episode, self.rng)

    def update(self, batch: TrajectoryBatch) -> Tuple[float, float]:
        returns = rewards_to_go(batch.rewards * self.cfg.reward_scale, self.episode.gamma)
        adv = advantage(returns, batch.values)
        steps = batch.steps
        self.net.train()
        first_entropy = first_value_loss = 0.0
        for pass_index in range(self.cfg.epochs_per_batch):
            self.optimizer.zero_grad()
            entropy_sum = value_sum = 0.0
            for t in range(steps):
                step = ppo_loss(self.net, batch.states[t], batch.actions[t], batch.old_probs[t], adv[t], returns[t], self.cfg)
                (step.loss / steps).backward()
                entropy_sum += step.entropy
                value_sum += step.value_loss
            self.optimizer.step_from_grads()
            if pass_index == 0:
                first_entropy, first_value_loss = entropy_sum / steps, value_sum / steps
        return first_entropy, first_value_loss

    def run_epoch(self, epoch: int) -> EpochMetrics:
        batch = self.collect()
        mean_reward = float(batch.rewards.sum(axis=0).mean())
        entropy, v_loss = self.update(batch)
        if not (math.isfinite(entropy) and math.isfinite(v_loss)):
            raise NumericalFault(f"non-finite training statistics at epoch {epoch}")
        if epoch <= self.cfg.total_epochs / 4 and entropy < self.cfg.entropy_floor:
            raise NumericalFault(f"policy entropy collapsed to {entropy:.4g} nats at epoch {epoch}")
        holdout = None
        if self.cfg.holdout_every and epoch % self.cfg.holdout_every == 0:
            holdout = self.holdout_psnr()
        return EpochMetrics(epoch=epoch, mean_reward=mean_reward, entropy=entropy, value_loss=v_loss, holdout_psnr=holdout)

    def _checkpoint(self, name: str, metrics: EpochMetrics):
        if self.output_dir is None:
            return
        save_checkpoint(self.net, self.output_dir / "checkpoints" / name, metadata={"seed": self.seed, **metrics.model_dump()})

    def train(self) -> TrainingResult:
        result = TrainingResult(self.net)
        logger.info("training on %d images, %d epochs of %d patches", len(self.images), self.cfg.total_epochs, self.cfg.batch_size)
        for epoch in range(1, self.cfg.total_epochs + 1):
            metrics = self.run_epoch(epoch)
            result.metrics.append(metrics)
            self.log.append(metrics)
            logger.info(
                "epoch %d reward %.4f entropy %.4f value_loss %.4g holdout %s",
                epoch, metrics.mean_reward, metrics.entropy, metrics.value_loss,
                "-" if metrics.holdout_psnr is None else f"{metrics.holdout_psnr:.3f}",
            )
            if metrics.holdout_psnr is not None and (result.best_holdout_psnr is None or metrics.holdout_psnr > result.best_holdout_psnr):
                result.best_holdout_psnr = metrics.holdout_psnr
                self._checkpoint("best.ckpt", metrics)
            if self.cfg.checkpoint_every and epoch % self.cfg.checkpoint_every == 0:
                self._checkpoint(f"epoch_{epoch:05d}.ckpt", metrics)
        if result.metrics:
            self._checkpoint("final.ckpt", result.metrics[-1])
        self.net.eval()
        return result


def train(
    trainset: Union[str, Path, Sequence[ImageGray]],
    net: PolicyValueNet,
    cfg: PPOConfig = PPOConfig(),
    episode: EpisodeConfig = EpisodeConfig(),
    seed: int = 0,
    holdout: Optional[Union[str, Path, Sequence[ImageGray]]] = None,
    output_dir: Optional[Union[str, Path]] = None,
) -> TrainingResult:
    images = load_dataset(trainset) if isinstance(trainset, (str, Path)) else list(trainset)
    if isinstance(holdout, (str, Path)):
        holdout = load_dataset(holdout)
    return PPOTrainer(net, images, cfg, episode, seed, holdout, output_dir).train()
