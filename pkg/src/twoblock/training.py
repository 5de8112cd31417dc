"""Minibatch Adam training on the variety loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datasets import gen_masks
from .model import TrajectoryModel, batch_loss
from .numkit import AdamState, Rng, TrainingError, adam_step
from .trajectory import WindowSet

log = logging.getLogger(__name__)

# sub-stream ids of the run seed
STREAM_INIT, STREAM_MASK, STREAM_SHUFFLE, STREAM_NOISE, STREAM_EVAL = range(5)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    k: int = 1
    seed: int = 0
    miss_ratio: float | None = None  # None: U(0.2, 0.8) per sequence
    resample_masks: bool = False
    clip_norm: float | None = None
    lr_final: float | None = None  # geometric per-epoch decay from lr to this value


def epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_final is None or cfg.epochs <= 1:
        return cfg.lr
    return cfg.lr * (cfg.lr_final / cfg.lr) ** (epoch / (cfg.epochs - 1))


@dataclass
class TrainResult:
    losses: list
    clamped_masks: int


def _clip(store, max_norm):
    total = np.sqrt(sum(float((p.grad**2).sum()) for _, p in store.items()))
    if total > max_norm:
        scale = max_norm / total
        for _, p in store.items():
            p.grad *= scale


def train(model: TrajectoryModel, windows: WindowSet, cfg: TrainConfig) -> TrainResult:
    """Fit ``model`` in place; returns the per-epoch mean training loss.

    Masks are drawn once per window (or every epoch with
    ``resample_masks``) from the run seed's mask stream, so the same seed,
    config and data give identical weights.
    """
    if cfg.k > 1 and model.config.noise_dim == 0:
        raise ValueError("variety loss with k > 1 needs a model with noise_dim > 0")
    N = len(windows)
    obs_n = model.normalize(windows.obs)
    fut_n = model.normalize(windows.future)
    mask_rng = Rng(cfg.seed, STREAM_MASK)
    shuffle_rng = Rng(cfg.seed, STREAM_SHUFFLE)
    noise_rng = Rng(cfg.seed, STREAM_NOISE)
    masks, clamped = gen_masks(N, windows.obs_len, mask_rng, cfg.miss_ratio)
    state = AdamState(lr=cfg.lr)
    losses = []
    for epoch in range(cfg.epochs):
        state.lr = epoch_lr(cfg, epoch)
        if cfg.resample_masks and epoch:
            masks, c = gen_masks(N, windows.obs_len, mask_rng, cfg.miss_ratio)
            clamped += c
        order = shuffle_rng.permutation(N)
        total = 0.0
        for bi, a in enumerate(range(0, N, cfg.batch)):
            idx = np.sort(order[a : a + cfg.batch])
            m = masks[idx]
            obs = np.where(m[..., None], obs_n[idx], np.nan)
            model.store.zero_grad()
            loss, tape, seeds, _ = batch_loss(model, obs, m, fut_n[idx], cfg.k, noise_rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            tape.backward(seeds)
            if cfg.clip_norm:
                _clip(model.store, cfg.clip_norm)
            adam_step(model.store, state)
            total += loss * len(idx)
        losses.append(total / N)
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    return TrainResult(losses, clamped)
