"""Pure-NumPy implementations of the hot sampling kernels.

Each kernel runs one fused forward (and, for the gradient kernels, backward)
pass through the swish MLP backbone. The compiled extension in
``_speedups.pyx`` implements the same three entry points; ``backend`` picks
whichever is available at import time.

Weights are passed as parallel lists ``ws`` (matrices, shape (in, out)) and
``bs`` (bias vectors); the final layer is linear and emits two logits per
attribute, flattened to shape (B, 2K).
"""

from __future__ import annotations

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(ws, bs, x):
    zs = []
    hs = [x]
    h = x
    for i in range(len(ws) - 1):
        z = h @ ws[i] + bs[i]
        zs.append(z)
        h = z * _sigmoid(z)
        hs.append(h)
    logits = h @ ws[-1] + bs[-1]
    return hs, zs, logits


def _backward_to_input(ws, hs, zs, g_logits):
    g = g_logits @ ws[-1].T
    for i in range(len(ws) - 2, -1, -1):
        s = _sigmoid(zs[i])
        g = (g * (s * (1.0 + zs[i] * (1.0 - s)))) @ ws[i].T
    return g


def mlp_logits(ws, bs, x: np.ndarray) -> np.ndarray:
    """Forward pass only; returns logits shaped (B, K, 2)."""
    _, _, logits = _forward(ws, bs, x)
    return logits.reshape(x.shape[0], -1, 2)


def joint_energy_grad(ws, bs, x: np.ndarray, y: np.ndarray):
    """Energy sum_k logits[k][y_k] and its gradient in x.

    Returns ``(e, g)`` with shapes (B,) and (B, D).
    """
    hs, zs, logits = _forward(ws, bs, x)
    batch, k2 = logits.shape
    k = k2 // 2
    cols = 2 * np.arange(k)[None, :] + y
    rows = np.arange(batch)[:, None]
    e = logits[rows, cols].sum(axis=1)
    g_logits = np.zeros_like(logits)
    g_logits[rows, cols] = 1.0
    return e, _backward_to_input(ws, hs, zs, g_logits)


def semicond_energy_grad(ws, bs, x: np.ndarray, cond_idx: np.ndarray, cond_val: np.ndarray):
    """Semi-conditional energy and gradient in x.

    Conditioned attributes contribute their selected logit; free attributes
    contribute logsumexp over their two logits (and a softmax-weighted seed
    in the backward pass). With no conditioned attributes this is the
    marginal energy.
    """
    hs, zs, logits = _forward(ws, bs, x)
    batch, k2 = logits.shape
    k = k2 // 2
    pairs = logits.reshape(batch, k, 2)
    free = np.ones(k, dtype=bool)
    free[cond_idx] = False

    e = np.zeros(batch)
    g_pairs = np.zeros_like(pairs)
    if len(cond_idx) > 0:
        sel = pairs[:, cond_idx, cond_val]
        e += sel.sum(axis=1)
        g_pairs[:, cond_idx, cond_val] = 1.0
    if free.any():
        fp = pairs[:, free, :]
        m = fp.max(axis=2, keepdims=True)
        ex = np.exp(fp - m)
        denom = ex.sum(axis=2, keepdims=True)
        e += (m[:, :, 0] + np.log(denom[:, :, 0])).sum(axis=1)
        g_pairs[:, free, :] = ex / denom
    return e, _backward_to_input(ws, hs, zs, g_pairs.reshape(batch, k2))
