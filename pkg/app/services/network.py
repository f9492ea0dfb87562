"""Shared-encoder fully convolutional policy/value network.

Layout is channel-first throughout: a batch of states is (B, H, W), policy
outputs are (B, A, H, W) with A = 27 actions, values are (B, H, W).
"""
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.core.errors import DataError, NumericalFault, ShapeError
from app.models.image import PEAK
from app.models.network import PARAM_BUDGET, Architecture

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"REPNPNET"
CHECKPOINT_VERSION = 1

ArrayLike = Union[np.ndarray, torch.Tensor]


class ConvLayer(nn.Conv2d):
    """Dilated convolution with zero 'same' padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, dilation: int = 1):
        if kernel_size % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {kernel_size}")
        super().__init__(in_channels, out_channels, kernel_size, padding=dilation * (kernel_size // 2), dilation=dilation)


class PolicyValueNet(nn.Module):
    def __init__(self, arch: Architecture = Architecture()):
        super().__init__()
        self.arch = arch
        k = arch.kernel_size
        layers = []
        in_ch = arch.in_channels
        for d in arch.dilations:
            layers.append(ConvLayer(in_ch, arch.channels, k, d))
            in_ch = arch.channels
        self.encoder = nn.ModuleList(layers)
        self.policy_head = nn.ModuleList([
            ConvLayer(arch.channels, arch.head_channels, k),
            ConvLayer(arch.head_channels, arch.n_actions, 1),
        ])
        self.value_head = nn.ModuleList([
            ConvLayer(arch.channels, arch.head_channels, k),
            ConvLayer(arch.head_channels, 1, 1),
        ])

    def reset_parameters(self):
        """He fan-in init; the last policy layer starts at zero (uniform policy)."""
        for layer in self.modules():
            if isinstance(layer, ConvLayer):
                nn.init.kaiming_normal_(layer.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(layer.bias)
        nn.init.zeros_(self.policy_head[-1].weight)
        nn.init.zeros_(self.policy_head[-1].bias)

    @property
    def dtype(self) -> torch.dtype:
        return self.policy_head[-1].weight.dtype

    def _run(self, layers, x, offset: int, activate_last: bool):
        for i, layer in enumerate(layers):
            x = layer(x)
            if activate_last or i < len(layers) - 1:
                x = F.relu(x)
            if not torch.isfinite(x).all():
                raise NumericalFault(f"non-finite activation at layer {offset + i}")
        return x

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(B, 1, H, W) normalized states -> policy logits (B, A, H, W), values (B, H, W)."""
        n_enc = len(self.encoder)
        s = self._run(self.encoder, x, 0, activate_last=True)
        logits = self._run(self.policy_head, s, n_enc, activate_last=False)
        value = self._run(self.value_head, s, n_enc + len(self.policy_head), activate_last=False)
        return logits, value[:, 0]

    @torch.no_grad()
    def evaluate(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Policy probabilities and values for (B, H, W) states in [0, 255] units."""
        x = torch.as_tensor(np.asarray(states) / PEAK, dtype=self.dtype)[:, None]
        logits, value = self(x)
        return torch.softmax(logits, dim=1).cpu().numpy().astype(np.float64), value.cpu().numpy().astype(np.float64)


def build_network(arch: Architecture = Architecture(), seed: int = 0, dtype: torch.dtype = torch.float32) -> PolicyValueNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = PolicyValueNet(arch)
        net.reset_parameters()
    return net.to(dtype)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def parameter_report(net: PolicyValueNet) -> Dict[str, int]:
    report = {name: p.numel() for name, p in net.named_parameters()}
    report["total"] = parameter_count(net)
    if report["total"] > PARAM_BUDGET:
        logger.warning("network has %d parameters, above the %d budget", report["total"], PARAM_BUDGET)
    return report


# Forward / backward / update

@dataclass
class ForwardCache:
    net_id: int
    inputs: torch.Tensor
    logits: torch.Tensor
    policy: torch.Tensor
    value: torch.Tensor


@dataclass
class GradientTape:
    grads: Dict[str, torch.Tensor]

    def is_finite(self) -> bool:
        return all(torch.isfinite(g).all() for g in self.grads.values())


def _as_states(state: ArrayLike, dtype: torch.dtype) -> torch.Tensor:
    x = torch.as_tensor(state, dtype=dtype)
    if x.dim() == 2:
        x = x[None]
    if x.dim() != 3:
        raise ShapeError(f"states must be (H, W) or (B, H, W), got {tuple(x.shape)}")
    return x[:, None]


def forward(net: PolicyValueNet, state: ArrayLike) -> Tuple[torch.Tensor, torch.Tensor, ForwardCache]:
    """Differentiable pass on states already normalized to [0, 1]."""
    x = _as_states(state, net.dtype)
    logits, value = net(x)
    policy = torch.softmax(logits, dim=1)
    return policy, value, ForwardCache(id(net), x, logits, policy, value)


def backward(net: PolicyValueNet, cache: ForwardCache, policy_grad: ArrayLike, value_grad: ArrayLike) -> GradientTape:
    """Reverse-mode gradients of a scalar loss given dL/dpolicy and dL/dvalue."""
    if cache.net_id != id(net):
        raise ShapeError("forward cache was produced by a different network")
    pg = torch.as_tensor(policy_grad, dtype=net.dtype)
    vg = torch.as_tensor(value_grad, dtype=net.dtype)
    if pg.shape != cache.policy.shape or vg.shape != cache.value.shape:
        raise ShapeError(f"gradient shapes {tuple(pg.shape)}/{tuple(vg.shape)} do not match outputs "
                         f"{tuple(cache.policy.shape)}/{tuple(cache.value.shape)}")
    names, params = zip(*net.named_parameters())
    grads = torch.autograd.grad(
        outputs=(cache.policy, cache.value),
        inputs=params,
        grad_outputs=(pg, vg),
        retain_graph=True,
        allow_unused=True,
    )
    tape = {n: (torch.zeros_like(p) if g is None else g.detach()) for n, p, g in zip(names, params, grads)}
    return GradientTape(tape)


class AdamOptimizer:
    """Adam over a network's parameters; moments persist across steps."""

    def __init__(self, net: PolicyValueNet, lr: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ShapeError(f"learning rate must be positive, got {lr}")
        self.net = net
        self.optimizer = torch.optim.Adam(net.parameters(), lr=lr, betas=betas, eps=eps)

    @property
    def step_count(self) -> int:
        states = [s.get("step", 0) for s in self.optimizer.state.values()]
        return int(max(states, default=0))

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=True)

    def step_from_grads(self):
        """Step with the .grad fields populated by loss.backward()."""
        for p in self.net.parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NumericalFault("non-finite gradient rejected")
        self.optimizer.step()

    def step(self, tape: GradientTape):
        if not tape.is_finite():
            raise NumericalFault("non-finite gradient rejected")
        for name, p in self.net.named_parameters():
            p.grad = tape.grads[name].clone()
        self.optimizer.step()
        self.zero_grad()


def adam_step(optimizer: AdamOptimizer, tape: GradientTape, lr: Optional[float] = None) -> PolicyValueNet:
    if lr is not None:
        if lr <= 0:
            raise ShapeError(f"learning rate must be positive, got {lr}")
        for group in optimizer.optimizer.param_groups:
            group["lr"] = lr
    optimizer.step(tape)
    return optimizer.net


# Checkpoints

def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def save_checkpoint(net: PolicyValueNet, path: Union[str, Path], metadata: Optional[dict] = None) -> Path:
    """Magic, version, architecture JSON, then float64 little-endian tensors in declaration order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor = net.arch.model_dump_json().encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(descriptor)))
        f.write(descriptor)
        for tensor in net.state_dict().values():
            f.write(tensor.detach().cpu().numpy().astype("<f8").tobytes())
    meta = {"architecture": net.arch.model_dump(), "parameters": parameter_count(net), **(metadata or {})}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return path


def read_architecture(path: Union[str, Path]) -> Architecture:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        return _read_header(f, path)


def _read_header(f, path: Path) -> Architecture:
    if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a network checkpoint")
    header = f.read(6)
    if len(header) != 6:
        raise DataError(f"{path}: truncated checkpoint header")
    version, desc_len = struct.unpack("<HI", header)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        return Architecture.model_validate_json(f.read(desc_len))
    except ValueError as e:
        raise DataError(f"{path}: bad architecture descriptor ({e})") from e


def load_checkpoint(path: Union[str, Path], arch: Optional[Architecture] = None, dtype: torch.dtype = torch.float32) -> PolicyValueNet:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        stored = _read_header(f, path)
        if arch is not None and arch != stored:
            raise DataError(f"{path}: checkpoint architecture {stored} does not match requested {arch}")
        net = PolicyValueNet(stored)
        state = {}
        for name, tensor in net.state_dict().items():
            raw = f.read(tensor.numel() * 8)
            if len(raw) != tensor.numel() * 8:
                raise DataError(f"{path}: truncated data for {name}")
            state[name] = torch.from_numpy(np.frombuffer(raw, dtype="<f8").reshape(tensor.shape).copy())
        if f.read(1):
            raise DataError(f"{path}: trailing bytes after parameters")
    net.load_state_dict(state)
    return net.to(dtype)
