"""Patch sampling, the Adam training loop, and the repeated-run protocol."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .core import PATCH_SIZE, extract_patch, onehot_encode
from .evaluation import EVAL_CLASSES, evaluate_volumes
from .inference import CHANNEL_MODES, StitchConfig, assemble_channels, segment_volume
from .network import (
    NetworkConfig,
    NetworkState,
    build_network,
    mse_loss_torch,
    save_checkpoint,
)
from .priors import PriorContext

MIN_FOREGROUND_FRACTION = 0.05


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 6
    patches_per_epoch: int = 1600
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_seed: int = 0
    channel_mode: str = "four_own_gt"
    gate_threshold: float = 0.7
    repetitions: int = 5

    def __post_init__(self):
        if min(self.epochs, self.patches_per_epoch, self.batch_size, self.repetitions) < 1:
            raise ValueError("epochs, patches_per_epoch, batch_size, repetitions must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.channel_mode not in CHANNEL_MODES:
            raise ValueError("unknown channel mode %r" % self.channel_mode)

    @property
    def in_channels(self) -> int:
        return 3 if self.channel_mode == "three" else 4


@dataclass
class RunRecord:
    """One training run: seed, loss curve, checkpoint, test DSC per class."""

    run_index: int
    seed: int
    epoch_losses: list = field(default_factory=list)
    checkpoint: str | None = None
    dsc: dict | None = None


def _eligible_origin_mask(labels2d: np.ndarray) -> np.ndarray:
    """Mask of patch origins whose window holds >= 5% non-background pixels."""
    h, w = labels2d.shape
    if h < PATCH_SIZE or w < PATCH_SIZE:
        return np.zeros((0, 0), dtype=bool)
    fg = (labels2d > 0).astype(np.int64)
    s = np.zeros((h + 1, w + 1), dtype=np.int64)
    s[1:, 1:] = fg.cumsum(0).cumsum(1)
    p = PATCH_SIZE
    counts = s[p:, p:] - s[:-p, p:] - s[p:, :-p] + s[:-p, :-p]
    need = int(np.ceil(MIN_FOREGROUND_FRACTION * p * p))
    return counts >= need


def sample_patches(
    volumes,
    count: int,
    channel_mode: str,
    rng: np.random.Generator,
    prior_context: PriorContext | None = None,
):
    """Draw `count` patches uniformly over all eligible origins in the set.

    The fourth channel follows channel_mode; in four_retrieved mode a
    gate rejection falls back to a zero prior channel, recorded on the
    patch as prior_used=False.
    """
    if channel_mode not in CHANNEL_MODES:
        raise ValueError("unknown channel mode %r" % channel_mode)
    slots = []  # (volume, slice index, flat origin indices)
    total = 0
    for vol in volumes:
        if vol.labels is None:
            raise ValueError("volume %s has no labels; cannot sample" % vol.subject_id)
        for k in range(vol.num_slices):
            mask = _eligible_origin_mask(vol.labels[k])
            n = int(mask.sum())
            if n == 0:
                continue
            slots.append((vol, k, mask, total))
            total += n
    if total == 0:
        raise ValueError("no eligible patch origins in the training set")

    draws = rng.integers(0, total, size=count)
    offsets = np.array([s[3] for s in slots])
    stack_cache = {}
    flat_cache = {}
    patches = []
    for d in draws:
        si = int(np.searchsorted(offsets, d, side="right")) - 1
        vol, k, mask, off = slots[si]
        key = (vol.subject_id, k)
        if key not in stack_cache:
            stack_cache[key] = assemble_channels(vol, k, channel_mode, prior_context)
            flat_cache[key] = np.flatnonzero(mask)
        stack, decision = stack_cache[key]
        r0, c0 = np.unravel_index(flat_cache[key][d - off], mask.shape)
        patch = extract_patch(stack, vol.labels[k], (int(r0), int(c0)))
        if channel_mode == "three":
            prior_used = None
        elif channel_mode == "four_own_gt":
            prior_used = True
        else:
            prior_used = decision.use_prior
        patches.append(replace(patch, prior_used=prior_used))
    return patches


def _batch_arrays(patches):
    x = np.stack([p.data for p in patches]).astype(np.float32)
    y = np.stack([onehot_encode(p.target) for p in patches]).astype(np.float32)
    return x, y


def train(
    config: TrainConfig,
    network_config: NetworkConfig,
    volumes,
    prior_context: PriorContext | None = None,
    seed: int | None = None,
    run_index: int = 0,
    checkpoint_path=None,
):
    """One full training run; deterministic given (config, data, seed).

    Returns (RunRecord, NetworkState). The record's DSC fields stay None
    until the caller evaluates the run on a test set.
    """
    if network_config.in_channels != config.in_channels:
        raise ValueError(
            "network in_channels %d inconsistent with channel mode %r"
            % (network_config.in_channels, config.channel_mode)
        )
    if config.channel_mode == "four_retrieved" and prior_context is None:
        raise ValueError("four_retrieved mode requires a retrieval context")
    run_seed = config.base_seed if seed is None else seed
    state = build_network(replace(network_config, seed=run_seed))
    rng = np.random.default_rng(run_seed)
    optimizer = torch.optim.Adam(
        state.module.parameters(),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
    )
    steps_per_epoch = config.patches_per_epoch // config.batch_size
    if steps_per_epoch < 1:
        raise ValueError("patches_per_epoch must be >= batch_size")
    record = RunRecord(run_index=run_index, seed=run_seed)
    step = 0
    state.module.train(True)
    for _ in range(config.epochs):
        patches = sample_patches(
            volumes, steps_per_epoch * config.batch_size, config.channel_mode, rng, prior_context
        )
        losses = []
        for b in range(steps_per_epoch):
            batch = patches[b * config.batch_size : (b + 1) * config.batch_size]
            x, y = _batch_arrays(batch)
            xt = torch.from_numpy(x).permute(0, 3, 1, 2)
            yt = torch.from_numpy(y).permute(0, 3, 1, 2)
            optimizer.zero_grad()
            out = state.module(xt)
            loss = mse_loss_torch(out, yt)
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite loss at step %d" % step)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            step += 1
        record.epoch_losses.append(float(np.mean(losses)))
    state.module.train(False)
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
        record.checkpoint = str(checkpoint_path)
    return record, state


def evaluate_run(
    state: NetworkState,
    test_volumes,
    channel_mode: str,
    prior_context: PriorContext | None = None,
    stitch: StitchConfig | None = None,
):
    """Pooled per-class test DSC for one trained network, plus gate decisions."""
    preds = []
    truths = []
    all_decisions = []
    for vol in test_volumes:
        if vol.labels is None:
            raise ValueError("test volume %s has no labels" % vol.subject_id)
        pred, decisions = segment_volume(state, vol, channel_mode, prior_context, stitch)
        preds.append(pred)
        truths.append(vol.labels)
        all_decisions.append(decisions)
    report = evaluate_volumes(preds, truths)
    dsc = {name: report.mean[name] for name in EVAL_CLASSES}
    return dsc, all_decisions


def run_repeated(
    config: TrainConfig,
    network_config: NetworkConfig,
    train_volumes,
    test_volumes,
    prior_context: PriorContext | None = None,
    stitch: StitchConfig | None = None,
    out_dir=None,
):
    """R independent runs with seeds base_seed + run_index, each test-scored."""
    records = []
    for i in range(config.repetitions):
        ckpt = None
        if out_dir is not None:
            ckpt = Path(out_dir) / ("run%d_%s.ckpt" % (i, config.channel_mode))
        try:
            record, state = train(
                config,
                network_config,
                train_volumes,
                prior_context,
                seed=config.base_seed + i,
                run_index=i,
                checkpoint_path=ckpt,
            )
            record.dsc, _ = evaluate_run(
                state, test_volumes, config.channel_mode, prior_context, stitch
            )
        except Exception as exc:
            raise RuntimeError("run %d failed: %s" % (i, exc)) from exc
        records.append(record)
    return records
