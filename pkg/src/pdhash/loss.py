"""Expected Hamming distance between posterior vectors and the N-pair loss.

Batches hold one (anchor, positive) pair per class. With anchors ``A`` and
positives ``P`` as ``(N_c, n)`` posterior arrays, ``E[i, r]`` is the expected
distance between anchor ``i`` and positive ``r``; the loss pulls the diagonal
to 0 and pushes every off-diagonal entry up to at least ``n / 2``.
"""
from __future__ import annotations

import numpy as np


def expected_hamming(probs, other_probs) -> float:
    """Expected number of disagreeing bits between independent Bernoulli vectors."""
    a = np.asarray(probs, dtype=np.float64)
    b = np.asarray(other_probs, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * (1.0 - b) + (1.0 - a) * b))


def expected_hamming_matrix(anchors, positives) -> np.ndarray:
    """``E[i, r] = expected_hamming(anchors[i], positives[r])`` for all pairs."""
    a = np.asarray(anchors, dtype=np.float64)
    p = np.asarray(positives, dtype=np.float64)
    if a.ndim != 2 or a.shape != p.shape:
        raise ValueError(f"need matching (N_c, n) arrays, got {a.shape} and {p.shape}")
    # sum_j a + p - 2 a p, evaluated per pair without BLAS for reproducibility
    return a.sum(axis=1)[:, None] + p.sum(axis=1)[None, :] - 2.0 * np.einsum(
        "ij,rj->ir", a, p, optimize=False
    )


def _hinge_weights(e: np.ndarray, n: int) -> np.ndarray:
    """dL/dE: 2E on the diagonal, -2 max(n/2 - E, 0) off it."""
    g = -2.0 * np.maximum(n / 2.0 - e, 0.0)
    np.fill_diagonal(g, 2.0 * np.diag(e))
    return g


def npair_contrastive_loss(anchors, positives) -> float:
    a = np.asarray(anchors, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("empty batch")
    n = a.shape[1]
    e = expected_hamming_matrix(a, positives)
    within = np.diag(e)
    cross = np.maximum(n / 2.0 - e, 0.0)
    np.fill_diagonal(cross, 0.0)
    return float(np.sum(within**2) + np.sum(cross**2))


def loss_grad_wrt_posteriors(anchors, positives) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(anchors, dtype=np.float64)
    p = np.asarray(positives, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("empty batch")
    n = a.shape[1]
    g = _hinge_weights(expected_hamming_matrix(a, p), n)
    # dE[i,r]/da_i = 1 - 2 p_r ;  dE[i,r]/dp_r = 1 - 2 a_i
    d_a = g.sum(axis=1)[:, None] - 2.0 * np.einsum("ir,rj->ij", g, p, optimize=False)
    d_p = g.sum(axis=0)[:, None] - 2.0 * np.einsum("ir,ij->rj", g, a, optimize=False)
    return d_a, d_p


def loss_grad_wrt_logits(anchors, positives) -> tuple[np.ndarray, np.ndarray]:
    """Gradients with respect to the logits that produced ``anchors``/``positives``.

    Uses dq/dx = -q (1 - q), the derivative of q = 1 / (1 + exp(x)).
    """
    a = np.asarray(anchors, dtype=np.float64)
    p = np.asarray(positives, dtype=np.float64)
    d_a, d_p = loss_grad_wrt_posteriors(a, p)
    return -d_a * a * (1.0 - a), -d_p * p * (1.0 - p)
