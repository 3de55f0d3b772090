"""Feed-forward likelihood estimator with hand-written backpropagation.

The network maps an image to one log-likelihood ratio per hash bit. Posteriors
follow ``q = 1 / (1 + exp(x))``, so a *negative* logit means bit 1 is likely.

Tensors are batched along axis 0 and images are channels-last ``(H, W, C)``.
Parameters are a flat list ``[W_1, b_1, W_2, b_2, ...]`` over the conv and
dense layers, in declaration order; dense weights are ``(out, in)`` and conv
weights are ``(out_channels, k*k*in_channels)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Union

import numpy as np

from .numerics import SplitMix64, matmul, stable_sigmoid


@dataclass(frozen=True)
class Conv:
    kernel: int
    out_channels: int
    stride: int = 1


@dataclass(frozen=True)
class MaxPool:
    size: int = 2


@dataclass(frozen=True)
class Dense:
    out_dim: int


@dataclass(frozen=True)
class ReLU:
    pass


Layer = Union[Conv, MaxPool, Dense, ReLU]


@dataclass
class ModelConfig:
    input_shape: tuple[int, ...]
    layers: list[Layer]
    code_bits: int

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.layers = list(self.layers)
        self.shapes()  # validates

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-layer output shapes (excluding batch), input shape first."""
        if not self.layers:
            raise ValueError("model needs at least one layer")
        if len(self.input_shape) not in (1, 3) or min(self.input_shape) < 1:
            raise ValueError(f"bad input shape {self.input_shape}")
        shape = self.input_shape
        out = [shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: conv needs an (H, W, C) input, got {shape}")
                if layer.kernel < 1 or layer.stride < 1 or layer.out_channels < 1:
                    raise ValueError(f"layer {i}: bad conv {layer}")
                h = (shape[0] - layer.kernel) // layer.stride + 1
                w = (shape[1] - layer.kernel) // layer.stride + 1
                if h < 1 or w < 1:
                    raise ValueError(f"layer {i}: kernel {layer.kernel} too large for {shape}")
                shape = (h, w, layer.out_channels)
            elif isinstance(layer, MaxPool):
                if len(shape) != 3 or shape[0] < layer.size or shape[1] < layer.size:
                    raise ValueError(f"layer {i}: cannot pool shape {shape}")
                shape = (shape[0] // layer.size, shape[1] // layer.size, shape[2])
            elif isinstance(layer, Dense):
                if layer.out_dim < 1:
                    raise ValueError(f"layer {i}: bad dense {layer}")
                shape = (layer.out_dim,)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise TypeError(f"layer {i}: unknown layer {layer!r}")
            out.append(shape)
        if not isinstance(self.layers[-1], Dense) or self.layers[-1].out_dim != self.code_bits:
            raise ValueError(f"final layer must be Dense({self.code_bits})")
        return out

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = self.shapes()
        result = []
        for layer, in_shape in zip(self.layers, shapes):
            if isinstance(layer, Conv):
                fan_in = layer.kernel * layer.kernel * in_shape[2]
                result += [(layer.out_channels, fan_in), (layer.out_channels,)]
            elif isinstance(layer, Dense):
                result += [(layer.out_dim, int(np.prod(in_shape))), (layer.out_dim,)]
        return result


def preset(name: str, input_shape, code_bits: int) -> ModelConfig:
    """Named desk-scale architectures: ``mlp-small`` and ``conv-small``."""
    if name == "mlp-small":
        layers = [Dense(64), ReLU(), Dense(code_bits)]
    elif name == "conv-small":
        layers = [
            Conv(5, 8), ReLU(), MaxPool(),
            Conv(5, 16), ReLU(), MaxPool(),
            Dense(64), ReLU(), Dense(code_bits),
        ]
    else:
        raise ValueError(f"unknown architecture {name!r}")
    return ModelConfig(tuple(input_shape), layers, code_bits)


PRESETS = ("mlp-small", "conv-small")


def init_params(cfg: ModelConfig, rng: SplitMix64) -> list[np.ndarray]:
    """Uniform(-s, s) weights with s = sqrt(6 / fan_in); zero biases."""
    params = []
    for shape in cfg.param_shapes():
        if len(shape) == 2:
            s = np.sqrt(6.0 / shape[1])
            params.append(rng.uniform(shape, -s, s))
        else:
            params.append(np.zeros(shape))
    return params


def _check_params(cfg: ModelConfig, params) -> None:
    expected = cfg.param_shapes()
    if len(params) != len(expected):
        raise ValueError(f"expected {len(expected)} parameter arrays, got {len(params)}")
    for p, s in zip(params, expected):
        if p.shape != s:
            raise ValueError(f"parameter shape {p.shape} != expected {s}")


def _patches(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (B, H, W, C) -> (B, Ho, Wo, k, k, C)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.moveaxis(win, 3, -1)


@dataclass
class ForwardTrace:
    cfg: ModelConfig
    batch: int
    caches: list = field(default_factory=list)

    def activation_pattern(self) -> bytes:
        """ReLU masks and max-pool winners; equal patterns mean the same linear piece."""
        parts = []
        for layer, cache in zip(self.cfg.layers, self.caches):
            if isinstance(layer, ReLU):
                parts.append(np.packbits(cache).tobytes())
            elif isinstance(layer, MaxPool):
                parts.append(cache[1].astype(np.uint8).tobytes())
        return b"".join(parts)


def forward(cfg: ModelConfig, params, x) -> tuple[np.ndarray, ForwardTrace]:
    """Logits for a batch ``x`` of shape ``(B, *cfg.input_shape)``."""
    _check_params(cfg, params)
    a = np.asarray(x, dtype=np.float64)
    if a.shape[1:] != cfg.input_shape:
        raise ValueError(f"input shape {a.shape[1:]} does not match {cfg.input_shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("input has non-finite values")
    batch = a.shape[0]
    trace = ForwardTrace(cfg, batch)
    pi = 0
    for layer in cfg.layers:
        if isinstance(layer, Conv):
            w, b = params[pi], params[pi + 1]
            pi += 2
            cols = _patches(a, layer.kernel, layer.stride)
            bsz, ho, wo = cols.shape[:3]
            cols = cols.reshape(bsz * ho * wo, -1)
            trace.caches.append((a.shape, cols))
            a = (matmul(cols, w.T) + b).reshape(bsz, ho, wo, -1)
        elif isinstance(layer, Dense):
            w, b = params[pi], params[pi + 1]
            pi += 2
            flat = a.reshape(batch, -1)
            trace.caches.append((a.shape, flat))
            a = matmul(flat, w.T) + b
        elif isinstance(layer, ReLU):
            mask = a > 0
            trace.caches.append(mask)
            a = a * mask
        elif isinstance(layer, MaxPool):
            s = layer.size
            bsz, h, w_, c = a.shape
            ho, wo = h // s, w_ // s
            blocks = a[:, : ho * s, : wo * s].reshape(bsz, ho, s, wo, s, c)
            blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(bsz, ho, wo, c, s * s)
            arg = np.argmax(blocks, axis=-1)
            trace.caches.append((a.shape, arg))
            a = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return a, trace


def backward(params, trace: ForwardTrace, grad_logits) -> list[np.ndarray]:
    """Parameter gradients given dL/dlogits of shape ``(B, code_bits)``."""
    cfg = trace.cfg
    _check_params(cfg, params)
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != (trace.batch, cfg.code_bits) or len(trace.caches) != len(cfg.layers):
        raise ValueError("gradient or trace does not match the forward pass")
    grads: list[np.ndarray] = [None] * len(params)
    pi = len(params)
    for idx in range(len(cfg.layers) - 1, -1, -1):
        layer, cache = cfg.layers[idx], trace.caches[idx]
        if isinstance(layer, Dense):
            pi -= 2
            in_shape, flat = cache
            grads[pi] = matmul(g.T, flat)
            grads[pi + 1] = g.sum(axis=0)
            if idx > 0:
                g = matmul(g, params[pi]).reshape(in_shape)
        elif isinstance(layer, Conv):
            pi -= 2
            in_shape, cols = cache
            bsz, h, w_, c = in_shape
            g2 = g.reshape(-1, g.shape[-1])
            grads[pi] = matmul(g2.T, cols)
            grads[pi + 1] = g2.sum(axis=0)
            if idx > 0:
                k, st = layer.kernel, layer.stride
                ho, wo = g.shape[1], g.shape[2]
                dcols = matmul(g2, params[pi]).reshape(bsz, ho, wo, k, k, c)
                dx = np.zeros(in_shape)
                for di in range(k):
                    for dj in range(k):
                        dx[:, di : di + st * ho : st, dj : dj + st * wo : st] += dcols[:, :, :, di, dj]
                g = dx
        elif isinstance(layer, ReLU):
            g = g * cache
        elif isinstance(layer, MaxPool):
            in_shape, arg = cache
            s = layer.size
            bsz, ho, wo, c = arg.shape
            blocks = np.zeros((bsz, ho, wo, c, s * s))
            np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
            blocks = blocks.reshape(bsz, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3)
            dx = np.zeros(in_shape)
            dx[:, : ho * s, : wo * s] = blocks.reshape(bsz, ho * s, wo * s, c)
            g = dx
    return grads


def posteriors(logits):
    """Per-bit posteriors Pr(h_j = 1 | image) from log-likelihood ratios."""
    return stable_sigmoid(logits)


# --- checkpoint file ---------------------------------------------------------

CKPT_MAGIC = b"PDHM"
CKPT_VERSION = 1
_TAG_CONV, _TAG_POOL, _TAG_DENSE, _TAG_RELU = 1, 2, 3, 4


def _pack_config(cfg: ModelConfig) -> bytes:
    out = [struct.pack("<B", len(cfg.input_shape))]
    out += [struct.pack("<I", d) for d in cfg.input_shape]
    out.append(struct.pack("<II", cfg.code_bits, len(cfg.layers)))
    for layer in cfg.layers:
        if isinstance(layer, Conv):
            out.append(struct.pack("<BIII", _TAG_CONV, layer.kernel, layer.out_channels, layer.stride))
        elif isinstance(layer, MaxPool):
            out.append(struct.pack("<BI", _TAG_POOL, layer.size))
        elif isinstance(layer, Dense):
            out.append(struct.pack("<BI", _TAG_DENSE, layer.out_dim))
        else:
            out.append(struct.pack("<B", _TAG_RELU))
    return b"".join(out)


def _read(f: BinaryIO, fmt: str):
    size = struct.calcsize(fmt)
    buf = f.read(size)
    if len(buf) != size:
        raise ValueError("truncated checkpoint")
    return struct.unpack(fmt, buf)


def save_checkpoint(path, cfg: ModelConfig, params) -> None:
    _check_params(cfg, params)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC + struct.pack("<I", CKPT_VERSION))
        f.write(_pack_config(cfg))
        for p in params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, list[np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a PDHM checkpoint")
        (version,) = _read(f, "<I")
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (ndim,) = _read(f, "<B")
        input_shape = _read(f, f"<{ndim}I")
        code_bits, n_layers = _read(f, "<II")
        layers: list[Layer] = []
        for _ in range(n_layers):
            (tag,) = _read(f, "<B")
            if tag == _TAG_CONV:
                layers.append(Conv(*_read(f, "<III")))
            elif tag == _TAG_POOL:
                layers.append(MaxPool(*_read(f, "<I")))
            elif tag == _TAG_DENSE:
                layers.append(Dense(*_read(f, "<I")))
            elif tag == _TAG_RELU:
                layers.append(ReLU())
            else:
                raise ValueError(f"{path}: unknown layer tag {tag}")
        cfg = ModelConfig(input_shape, layers, code_bits)
        params = []
        for shape in cfg.param_shapes():
            count = int(np.prod(shape))
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated parameters")
            params.append(np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape))
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after parameters")
    return cfg, params
