"""Pixel-wise MDP denoiser: every pixel adds an integer residual in [-13, 13] per step."""
import logging
from typing import Optional, Protocol, Tuple

import numpy as np

from app.core.errors import ConfigError, DataError, ShapeError
from app.models.episode import ACTION_OFFSET, N_ACTIONS, EpisodeConfig, TrajectoryBatch
from app.models.image import PEAK, ImageGray

logger = logging.getLogger(__name__)


class PolicyModel(Protocol):
    def evaluate(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(B, H, W) states in [0, 255] -> probabilities (B, A, H, W), values (B, H, W)."""
        ...


def residual(actions: np.ndarray) -> np.ndarray:
    return np.asarray(actions, dtype=np.float64) - ACTION_OFFSET


def apply_actions(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    if states.shape != actions.shape:
        raise ShapeError(f"state {states.shape} and action map {actions.shape} differ")
    if actions.min(initial=0) < 0 or actions.max(initial=0) >= N_ACTIONS:
        raise ShapeError(f"action indices must lie in [0, {N_ACTIONS - 1}]")
    return np.clip(states + residual(actions), 0.0, PEAK)


def transition(img: ImageGray, actions: np.ndarray) -> ImageGray:
    return ImageGray(apply_actions(img.data, np.asarray(actions)))


def reward_map(x: ImageGray, prev: ImageGray, cur: ImageGray) -> np.ndarray:
    """Per-pixel step-wise improvement (x - prev)^2 - (x - cur)^2."""
    if not x.shape == prev.shape == cur.shape:
        raise ShapeError(f"reward needs equal shapes, got {x.shape}, {prev.shape}, {cur.shape}")
    return _rewards(x.data, prev.data, cur.data)


def _rewards(clean: np.ndarray, prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    return (clean - prev) ** 2 - (clean - cur) ** 2


def rewards_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted returns by backward recursion over the leading (time) axis."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim < 1 or rewards.shape[0] < 1:
        raise ShapeError("rewards need at least one step")
    returns = np.empty_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def _sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # inverse-CDF draw along the action axis; the CDF is renormalised so its
    # last entry is exactly 1 and a zero-probability action is never chosen
    cdf = np.cumsum(np.asarray(probs, dtype=np.float64), axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((probs.shape[0], 1) + probs.shape[2:])
    return (u >= cdf).sum(axis=1)


def greedy_batch(net: PolicyModel, states: np.ndarray, steps: int) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    for _ in range(steps):
        probs, _ = net.evaluate(states)
        states = apply_actions(states, probs.argmax(axis=1))
    return states


def denoise_greedy(net: PolicyModel, noisy: ImageGray, cfg: EpisodeConfig = EpisodeConfig()) -> ImageGray:
    return ImageGray(greedy_batch(net, noisy.data[None], cfg.steps)[0])


def collect_trajectories(
    net: PolicyModel,
    noisy: np.ndarray,
    clean: Optional[np.ndarray],
    cfg: EpisodeConfig,
    rng: np.random.Generator,
) -> TrajectoryBatch:
    """Roll out sampled actions on a (B, H, W) batch against a frozen policy."""
    if clean is None:
        raise DataError("sampled rollouts need the clean target to compute rewards")
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.shape != clean.shape:
        raise ShapeError(f"noisy {noisy.shape} and clean {clean.shape} differ")
    states = [noisy]
    actions, rewards, old_probs, values = [], [], [], []
    for _ in range(cfg.steps):
        probs, value = net.evaluate(states[-1])
        a = _sample_actions(probs, rng)
        nxt = apply_actions(states[-1], a)
        actions.append(a)
        old_probs.append(np.take_along_axis(probs, a[:, None], axis=1)[:, 0])
        values.append(value)
        rewards.append(_rewards(clean, states[-1], nxt))
        states.append(nxt)
    return TrajectoryBatch(
        states=np.stack(states),
        actions=np.stack(actions),
        rewards=np.stack(rewards),
        old_probs=np.stack(old_probs),
        values=np.stack(values),
        clean=clean,
    )


def denoise_sampled(
    net: PolicyModel,
    noisy: ImageGray,
    cfg: EpisodeConfig,
    seed: int,
    clean: Optional[ImageGray] = None,
) -> TrajectoryBatch:
    if clean is None:
        raise DataError("sampled rollouts need the clean target to compute rewards")
    rng = np.random.default_rng(seed)
    return collect_trajectories(net, noisy.data[None], clean.data[None], cfg, rng)


def prior_strength(sigma_k: float, sigma_train: float = 25.0) -> float:
    if sigma_k <= 0:
        raise ConfigError(f"denoiser sigma must be positive, got {sigma_k}")
    return min(1.0, sigma_k / sigma_train)


def denoiser_as_prior(
    net: PolicyModel,
    x_k: ImageGray,
    sigma_k: float,
    sigma_train: float = 25.0,
    cfg: EpisodeConfig = EpisodeConfig(),
) -> ImageGray:
    """z = x + alpha (D(x) - x), alpha = min(1, sigma_k / sigma_train)."""
    alpha = prior_strength(sigma_k, sigma_train)
    denoised = denoise_greedy(net, x_k, cfg)
    return ImageGray(x_k.data + alpha * (denoised.data - x_k.data))


class DRLDenoiser:
    """A trained policy packaged as the PnP prior callback D_sigma."""

    def __init__(self, net: PolicyModel, episode: EpisodeConfig = EpisodeConfig(), sigma_train: float = 25.0):
        self.net = net
        self.episode = episode
        self.sigma_train = sigma_train

    def denoise(self, img: ImageGray) -> ImageGray:
        return denoise_greedy(self.net, img, self.episode)

    def __call__(self, x: ImageGray, sigma: float) -> ImageGray:
        return denoiser_as_prior(self.net, x, sigma, self.sigma_train, self.episode)
