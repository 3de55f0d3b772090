"""Dense float64 linear algebra, a counter-based PRNG, SGD and a gradient checker.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Everything that
touches randomness goes through :class:`SplitMix64` so that a seed fully
determines every stochastic result on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "SplitMix64",
    "SgdConfig",
    "as_matrix",
    "matmul",
    "stable_sigmoid",
    "sgd_step",
    "finite_diff_gradient",
]

_MASK64 = (1 << 64) - 1

# SplitMix64 constants (Steele, Lea & Flood 2014; the reference generator
# used to seed the xoshiro family).
GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX_MUL_1 = np.uint64(0xBF58476D1CE4E5B9)
MIX_MUL_2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= MIX_MUL_1
    z ^= z >> np.uint64(27)
    z *= MIX_MUL_2
    z ^= z >> np.uint64(31)
    return z


class SplitMix64:
    """Counter-based SplitMix64 stream.

    Draw ``i`` (0-based, counted from construction) is::

        z = seed + (i + 1) * 0x9E3779B97F4A7C15      (mod 2**64)
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        out = z ^ (z >> 31)

    which is exactly the sequential SplitMix64 generator, but computable for
    any block of counters at once. Floats use the top 53 bits. ``split``
    derives an independent child seed from the next draw.
    """

    def __init__(self, seed: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"SplitMix64(seed={self.seed:#x}, counter={self.counter})"

    def u64(self, size: int | tuple[int, ...] = 1) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        idx = np.arange(self.counter + 1, self.counter + 1 + count, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * GOLDEN_GAMMA
            return _mix64(z).reshape(shape)

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def uniform(self, size=1, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Floats in [low, high) with 53 random bits each."""
        u = (self.u64(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def integers(self, bound: int, size=1) -> np.ndarray:
        """Integers in [0, bound) as ``floor(u * bound)``; bias below 2**-53 * bound."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        return np.floor(self.uniform(size) * bound).astype(np.int64)

    def bits(self, size=1) -> np.ndarray:
        """Fair coin flips (top bit of each draw) as uint8."""
        return (self.u64(size) >> np.uint64(63)).astype(np.uint8)

    def normal(self, size=1) -> np.ndarray:
        """Standard normals by Box-Muller, two uniforms per output."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = int(np.prod(shape, dtype=np.int64))
        u = self.uniform(2 * count).reshape(2, count)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        return (r * np.cos(2.0 * np.pi * u[1])).reshape(shape)

    def bernoulli(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return (self.uniform(p.shape) < p).astype(np.uint8)

    def split(self) -> "SplitMix64":
        return SplitMix64(self.next_u64())


@dataclass
class SgdConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_scheme: str = "n-pair"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_scheme != "n-pair":
            raise ValueError(f"unsupported batch scheme {self.batch_scheme!r}")


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float64 array, optionally reshaping row-major."""
    m = np.asarray(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if m.size != rows * cols:
            raise ValueError(f"{m.size} values cannot fill a {rows}x{cols} matrix")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a thread-count independent summation order.

    Uses numpy's single-threaded einsum kernel rather than BLAS so results are
    bit-identical from run to run.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return np.einsum("ij,jk->ik", a, b, optimize=False)


_HALF_BELOW = np.nextafter(0.5, 0.0)
_ONE_BELOW = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


def stable_sigmoid(x):
    """``1 / (1 + exp(x))``, decreasing in ``x``.

    Saturates inside the open interval (0, 1) and keeps the threshold exact:
    the result is >= 0.5 iff ``x <= 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    q = np.where(x >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    q = np.where((x > 0) & (q >= 0.5), _HALF_BELOW, q)
    q = np.clip(q, _TINY, _ONE_BELOW)
    return q if q.ndim else float(q)


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    cfg: SgdConfig,
    velocity: Sequence[np.ndarray],
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Heavy-ball SGD: ``v <- momentum*v - lr*g``; ``p <- p + v``. Returns new lists."""
    if not (len(params) == len(grads) == len(velocity)):
        raise ValueError("params, grads and velocity must have the same length")
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        if not (p.shape == g.shape == v.shape):
            raise ValueError(f"shape mismatch: {p.shape}, {g.shape}, {v.shape}")
        v = cfg.momentum * v - cfg.learning_rate * g
        new_v.append(v)
        new_p.append(p + v)
    return new_p, new_v


def finite_diff_gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    With ``coords`` only those flat indices are estimated; the rest stay 0.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size) if coords is None else coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
