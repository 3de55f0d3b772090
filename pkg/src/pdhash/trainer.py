"""N-pair batch sampling, shift/flip augmentation and the SGD training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .loss import loss_grad_wrt_logits, npair_contrastive_loss
from .model import ModelConfig, backward, forward, init_params, posteriors
from .numerics import SgdConfig, SplitMix64, sgd_step

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


# conv-small on 28x28 digits collapses to a constant code at 3e-4 and above
DEFAULT_LEARNING_RATE = {"mlp-small": 1e-3, "conv-small": 1e-4}


@dataclass
class AugmentConfig:
    shift_pixels: int = 0
    horizontal_flip: bool = False

    def __post_init__(self):
        if not 0 <= self.shift_pixels <= 4:
            raise ValueError("shift_pixels must be in [0, 4]")

    @property
    def enabled(self) -> bool:
        return self.shift_pixels > 0 or self.horizontal_flip


@dataclass
class TrainConfig:
    code_bits: int = 12
    sgd: SgdConfig = field(default_factory=SgdConfig)
    epochs: int = 10
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def __post_init__(self):
        if self.code_bits < 1:
            raise ValueError("code_bits must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class PairBatch:
    """One (anchor, positive) dataset index pair per class, classes ascending."""

    classes: np.ndarray
    anchors: np.ndarray
    positives: np.ndarray


def sample_npair_batch(ds: LabeledDataset, rng: SplitMix64, class_indices=None) -> PairBatch:
    """Two distinct images per class, uniform without replacement within the class."""
    class_indices = ds.class_indices() if class_indices is None else class_indices
    sizes = np.array([len(idx) for idx in class_indices])
    short = np.flatnonzero(sizes < 2)
    if len(short):
        c = int(short[0])
        raise ValueError(f"class {c} has {sizes[c]} image(s); pair sampling needs at least 2")
    u = rng.uniform((len(sizes), 2))
    first = np.floor(u[:, 0] * sizes).astype(np.int64)
    second = np.floor(u[:, 1] * (sizes - 1)).astype(np.int64)
    second += second >= first
    anchors = np.array([idx[i] for idx, i in zip(class_indices, first)])
    positives = np.array([idx[i] for idx, i in zip(class_indices, second)])
    return PairBatch(np.arange(len(sizes)), anchors, positives)


def shift_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate an (H, W, C) image by ``dx`` columns and ``dy`` rows, zero filled."""
    h, w = img.shape[:2]
    out = np.zeros_like(img)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def augment(img: np.ndarray, cfg: AugmentConfig, rng: SplitMix64) -> np.ndarray:
    """Random integer shift in [-s, s]^2 and optional horizontal flip.

    Flat (non-image) inputs pass through unchanged. No draws are consumed when
    augmentation is disabled.
    """
    if img.ndim != 3 or not cfg.enabled:
        return img
    out = img
    if cfg.shift_pixels:
        s = cfg.shift_pixels
        dx, dy = rng.integers(2 * s + 1, 2) - s
        out = shift_image(out, int(dx), int(dy))
    if cfg.horizontal_flip and rng.uniform(1)[0] < 0.5:
        out = out[:, ::-1]
    return out


def steps_per_epoch(ds: LabeledDataset) -> int:
    return max(1, len(ds) // (2 * ds.n_classes))


@dataclass
class TrainResult:
    params: list
    losses: list[float]


def batch_loss_and_grads(mcfg: ModelConfig, params, anchors_x, positives_x):
    """Loss and parameter gradients for one batch of anchor/positive images."""
    n_c = len(anchors_x)
    logits, trace = forward(mcfg, params, np.concatenate([anchors_x, positives_x]))
    q = posteriors(logits)
    loss = npair_contrastive_loss(q[:n_c], q[n_c:])
    g_a, g_p = loss_grad_wrt_logits(q[:n_c], q[n_c:])
    grads = backward(params, trace, np.concatenate([g_a, g_p]))
    return loss, grads


def train(ds: LabeledDataset, mcfg: ModelConfig, tcfg: TrainConfig, params=None, progress=None) -> TrainResult:
    """Minimize the N-pair loss with momentum SGD; fully determined by ``tcfg.seed``."""
    if mcfg.code_bits != tcfg.code_bits:
        raise ValueError(f"model emits {mcfg.code_bits} bits but training asks for {tcfg.code_bits}")
    if ds.image_shape != mcfg.input_shape:
        raise ValueError(f"dataset images {ds.image_shape} do not match model input {mcfg.input_shape}")
    root = SplitMix64(tcfg.seed)
    init_rng, batch_rng, aug_rng = root.split(), root.split(), root.split()
    params = init_params(mcfg, init_rng) if params is None else [p.copy() for p in params]
    velocity = [np.zeros_like(p) for p in params]
    class_indices = ds.class_indices()
    steps = steps_per_epoch(ds)
    losses: list[float] = []
    for epoch in range(tcfg.epochs):
        for step in range(steps):
            batch = sample_npair_batch(ds, batch_rng, class_indices)
            xa = ds.images[batch.anchors]
            xp = ds.images[batch.positives]
            if tcfg.augment.enabled:
                xa = np.stack([augment(im, tcfg.augment, aug_rng) for im in xa])
                xp = np.stack([augment(im, tcfg.augment, aug_rng) for im in xp])
            loss, grads = batch_loss_and_grads(mcfg, params, xa, xp)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, step {step}")
            losses.append(loss)
            params, velocity = sgd_step(params, grads, tcfg.sgd, velocity)
        log.info("epoch %d: mean batch loss %.4f", epoch, np.mean(losses[-steps:]))
        if progress is not None:
            progress(epoch, losses[-steps:])
    return TrainResult(params, losses)


def encode_logits(mcfg: ModelConfig, params, images, batch_size: int = 512) -> np.ndarray:
    out = [forward(mcfg, params, images[i : i + batch_size])[0] for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, mcfg.code_bits))
