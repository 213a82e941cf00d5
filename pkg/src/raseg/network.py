"""Multi-channel encoder-decoder segmentation network.

U-Net style: encoder levels of two (conv -> batch norm -> ReLU) blocks with
2x2 max pooling between levels, a mirrored decoder using stride-2
transposed convolutions with same-resolution skip concatenation, and a
final 1x1 convolution to per-pixel class softmax. Arrays cross this module
boundary as channels-last numpy batches (N, rows, cols, C); torch is an
internal engine. Weight init is driven by a dedicated generator so two
builds from the same seed are bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .storage import read_tensors, write_tensors

BN_MOMENTUM = 0.1  # running stats momentum 0.9 in the (1 - m) convention


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 4
    num_classes: int = 6
    depth: int = 4
    base_filters: int = 16
    kernel_size: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.in_channels not in (3, 4):
            raise ValueError("in_channels must be 3 or 4, got %d" % self.in_channels)
        if self.depth < 2:
            raise ValueError("depth must be >= 2, got %d" % self.depth)
        if self.base_filters < 1:
            raise ValueError("base_filters must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 1")

    @property
    def pool_factor(self) -> int:
        return 2 ** (self.depth - 1)


class ConvBlock(nn.Module):
    """Two conv -> BN -> ReLU stages at constant resolution."""

    def __init__(self, cin, cout, k):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, k, padding=k // 2, bias=False)
        self.bn1 = nn.BatchNorm2d(cout, momentum=BN_MOMENTUM)
        self.conv2 = nn.Conv2d(cout, cout, k, padding=k // 2, bias=False)
        self.bn2 = nn.BatchNorm2d(cout, momentum=BN_MOMENTUM)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        x = self.act(self.bn1(self.conv1(x)))
        return self.act(self.bn2(self.conv2(x)))


class UpBlock(nn.Module):
    """Stride-2 2x2 transposed convolution followed by BN -> ReLU."""

    def __init__(self, cin, cout):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(cin, cout, 2, stride=2, bias=False)
        self.bn = nn.BatchNorm2d(cout, momentum=BN_MOMENTUM)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.bn(self.deconv(x)))


class MultiChannelUNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        chans = [config.base_filters * 2**i for i in range(config.depth)]
        self.enc = nn.ModuleList()
        cin = config.in_channels
        for c in chans:
            self.enc.append(ConvBlock(cin, c, config.kernel_size))
            cin = c
        self.pool = nn.MaxPool2d(2)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in range(config.depth - 2, -1, -1):
            self.up.append(UpBlock(chans[i + 1], chans[i]))
            self.dec.append(ConvBlock(2 * chans[i], chans[i], config.kernel_size))
        self.head = nn.Conv2d(chans[0], config.num_classes, 1)

    def forward(self, x):
        skips = []
        for i, block in enumerate(self.enc):
            if i:
                x = self.pool(x)
            x = block(x)
            skips.append(x)
        for j, (up, dec) in enumerate(zip(self.up, self.dec)):
            x = up(x)
            x = dec(torch.cat([x, skips[-2 - j]], dim=1))
        return torch.softmax(self.head(x), dim=1)


@dataclass(frozen=True)
class NetworkState:
    """A built network plus its config; parameters addressable by name."""

    module: MultiChannelUNet
    config: NetworkConfig

    def parameter_arrays(self) -> dict:
        return {
            name: p.detach().numpy().copy() for name, p in self.module.named_parameters()
        }

    def parameter_shapes(self) -> dict:
        return {name: tuple(p.shape) for name, p in self.module.named_parameters()}


def _init_weights(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def build_network(config: NetworkConfig, dtype=torch.float32) -> NetworkState:
    """Construct and deterministically initialize the network."""
    module = MultiChannelUNet(config)
    _init_weights(module, config.seed)
    module.to(dtype)
    module.eval()
    return NetworkState(module=module, config=config)


def _check_batch(batch: np.ndarray, config: NetworkConfig, channels: int) -> None:
    if batch.ndim != 4:
        raise ValueError("batch must be 4D (N, rows, cols, C), got shape %s" % (batch.shape,))
    n, h, w, c = batch.shape
    if n < 1:
        raise ValueError("batch size must be >= 1")
    if c != channels:
        raise ValueError("channel dimension is %d, expected %d" % (c, channels))
    f = config.pool_factor
    if h % f or w % f:
        raise ValueError(
            "spatial dims (%d, %d) must be divisible by %d for depth %d"
            % (h, w, f, config.depth)
        )


def forward(state: NetworkState, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Run the network on a channels-last batch; returns per-pixel class probabilities.

    Train mode normalizes with batch statistics (and advances the running
    estimates); eval mode uses the stored running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval', got %r" % mode)
    batch = np.asarray(batch)
    _check_batch(batch, state.config, state.config.in_channels)
    dtype = next(state.module.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(batch)).to(dtype).permute(0, 3, 1, 2)
    self_mode = state.module.training
    state.module.train(mode == "train")
    with torch.no_grad():
        y = state.module(x)
    state.module.train(self_mode)
    return y.permute(0, 2, 3, 1).numpy().astype(batch.dtype, copy=False)


def mse_loss(output: np.ndarray, target: np.ndarray) -> float:
    """Batch-mean sum-of-squares loss: mean over samples of ||x_n - y_n||^2."""
    x = np.asarray(output, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("shape mismatch: %s vs %s" % (x.shape, y.shape))
    n = x.shape[0]
    return float(((x - y) ** 2).sum() / n)


def mse_loss_torch(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return ((output - target) ** 2).sum() / output.shape[0]


def backward(state: NetworkState, batch: np.ndarray, target: np.ndarray) -> dict:
    """Exact gradients of the train-mode loss w.r.t. every parameter.

    Pure query: batch-norm running statistics are snapshotted and restored,
    so repeated calls return identical gradients.
    """
    batch = np.asarray(batch)
    target = np.asarray(target)
    _check_batch(batch, state.config, state.config.in_channels)
    if target.shape != batch.shape[:3] + (state.config.num_classes,):
        raise ValueError(
            "target shape %s does not match output shape %s"
            % (target.shape, batch.shape[:3] + (state.config.num_classes,))
        )
    dtype = next(state.module.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(batch)).to(dtype).permute(0, 3, 1, 2)
    y = torch.from_numpy(np.ascontiguousarray(target)).to(dtype).permute(0, 3, 1, 2)
    buffers = {name: b.detach().clone() for name, b in state.module.named_buffers()}
    was_training = state.module.training
    state.module.train(True)
    out = state.module(x)
    loss = mse_loss_torch(out, y)
    params = dict(state.module.named_parameters())
    grads = torch.autograd.grad(loss, list(params.values()))
    state.module.train(was_training)
    with torch.no_grad():
        for name, b in state.module.named_buffers():
            b.copy_(buffers[name])
    return {name: g.detach().numpy().copy() for name, g in zip(params, grads)}


def save_checkpoint(state: NetworkState, path) -> None:
    """Serialize config plus every parameter and buffer; reloads bit-exactly."""
    cfg = state.config
    extra = {
        "kind": "checkpoint",
        "in_channels": cfg.in_channels,
        "num_classes": cfg.num_classes,
        "depth": cfg.depth,
        "base_filters": cfg.base_filters,
        "kernel_size": cfg.kernel_size,
        "seed": cfg.seed,
    }
    tensors = {name: t.detach().numpy() for name, t in state.module.state_dict().items()}
    write_tensors(path, tensors, extra=extra)


def load_checkpoint(path) -> NetworkState:
    tensors, extra = read_tensors(path)
    if extra.get("kind") != "checkpoint":
        raise ValueError("%s is not a checkpoint file" % path)
    config = NetworkConfig(
        in_channels=int(extra["in_channels"]),
        num_classes=int(extra["num_classes"]),
        depth=int(extra["depth"]),
        base_filters=int(extra["base_filters"]),
        kernel_size=int(extra["kernel_size"]),
        seed=int(extra["seed"]),
    )
    state = build_network(config)
    state.module.load_state_dict(
        {name: torch.from_numpy(arr.copy()) for name, arr in tensors.items()}
    )
    return state
