"""Finite-difference verification of the end-to-end loss gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import expected_hamming_matrix, loss_grad_wrt_logits, npair_contrastive_loss
from .model import ModelConfig, forward, init_params, posteriors, preset
from .numerics import SplitMix64, finite_diff_gradient
from .trainer import batch_loss_and_grads


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GradCheckCase:
    cfg: ModelConfig
    params: list
    anchors: np.ndarray
    positives: np.ndarray

    def evaluate(self, params=None) -> tuple[float, bytes]:
        """Loss plus a signature of every kink the loss passes through.

        The signature covers ReLU masks, max-pool winners and which hinge
        terms are active; the loss is smooth while it stays fixed.
        """
        params = self.params if params is None else params
        n_c = len(self.anchors)
        logits, trace = forward(self.cfg, params, np.concatenate([self.anchors, self.positives]))
        q = posteriors(logits)
        hinge = expected_hamming_matrix(q[:n_c], q[n_c:]) < self.cfg.code_bits / 2.0
        pattern = trace.activation_pattern() + np.packbits(hinge).tobytes()
        return npair_contrastive_loss(q[:n_c], q[n_c:]), pattern

    def loss(self, params=None) -> float:
        return self.evaluate(params)[0]


def random_case(rng: SplitMix64, arch: str) -> GradCheckCase:
    """A random (architecture instance, parameters, batch) triple.

    conv-small keeps its layer stack but runs on 16..20 pixel inputs so the
    finite-difference sweep stays cheap.
    """
    n_bits = int(rng.integers(16)[0]) + 1
    n_classes = int(rng.integers(3)[0]) + 2
    if arch == "mlp-small":
        shape = (int(rng.integers(7)[0]) + 2,)
    else:
        side = int(rng.integers(5)[0]) + 16
        shape = (side, side, int(rng.integers(2)[0]) + 1)
    cfg = preset(arch, shape, n_bits)
    params = init_params(cfg, rng)
    params = [p if p.ndim == 2 else rng.uniform(p.shape, -0.1, 0.1) for p in params]
    x = rng.uniform((2 * n_classes,) + shape)
    return GradCheckCase(cfg, params, x[:n_classes], x[n_classes:])


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    kinks_skipped: int


def check_case(case: GradCheckCase, rng: SplitMix64, per_array: int = 8, h: float = 1e-5) -> GradCheckResult:
    """Compare backprop with central differences on random coordinates.

    Every parameter array contributes up to ``per_array`` coordinates. A
    coordinate whose stencil ``x +/- h`` changes the kink signature is not
    differentiable at that scale; it is counted and replaced by another draw.
    """
    _, grads = batch_loss_and_grads(case.cfg, case.params, case.anchors, case.positives)
    _, base_pattern = case.evaluate()
    worst, checked, skipped = 0.0, 0, 0
    for k, p in enumerate(case.params):
        order = np.argsort(rng.uniform(p.size), kind="stable")
        taken = 0
        for i in order:
            if taken == per_array:
                break
            patterns = []

            def f(flat_p, k=k):
                params = list(case.params)
                params[k] = flat_p.reshape(p.shape)
                value, pattern = case.evaluate(params)
                patterns.append(pattern)
                return value

            fd = finite_diff_gradient(f, p.reshape(-1), h, [int(i)])[i]
            if any(pt != base_pattern for pt in patterns):
                skipped += 1
                continue
            worst = max(worst, float(relative_error(grads[k].reshape(-1)[i], fd)))
            taken += 1
            checked += 1
    return GradCheckResult(worst, checked, skipped)


def check_logit_gradient(rng: SplitMix64, h: float = 1e-5) -> float:
    """Max relative error of dL/dlogits on a random batch."""
    n_bits = int(rng.integers(16)[0]) + 1
    n_classes = int(rng.integers(4)[0]) + 1
    x = rng.normal((2 * n_classes, n_bits)) * 2.0

    def f(z):
        q = posteriors(z)
        return npair_contrastive_loss(q[:n_classes], q[n_classes:])

    q = posteriors(x)
    g_a, g_p = loss_grad_wrt_logits(q[:n_classes], q[n_classes:])
    analytic = np.concatenate([g_a, g_p])
    return float(relative_error(analytic, finite_diff_gradient(f, x, h)).max())
