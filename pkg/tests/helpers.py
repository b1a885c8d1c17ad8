"""Shared test oracles: finite differences, brute-force metrics, toy models.

Everything here is deliberately independent of the library's own
implementations so the two routes can disagree.
"""

from __future__ import annotations

import numpy as np

from jointebm.energy import JacobianBackbone


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def pair_count_auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney statistic by explicit O(n^2) pair counting."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def threshold_sweep_ap(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision by an exhaustive sweep over distinct thresholds."""
    thresholds = np.unique(scores)[::-1]
    n_pos = labels.sum()
    ap = 0.0
    prev_recall = 0.0
    for t in thresholds:
        pred = scores >= t
        tp = float(np.sum(pred & (labels == 1)))
        fp = float(np.sum(pred & (labels == 0)))
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def pooled_f1(conf: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    """Micro F1 from pooled counts over every cell."""
    pred = conf.ravel() >= threshold
    lab = labels.ravel()
    tp = np.sum(pred & (lab == 1))
    fp = np.sum(pred & (lab == 0))
    fn = np.sum(~pred & (lab == 1))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


class GaussianLogitToy(JacobianBackbone):
    """Analytic backbone: logit (k, j) is a Gaussian bump plus an offset.

    logits[k][j] = -|x - c[k,j]|^2 / (2 s[k,j]^2) + off[k,j], so each label
    vector's conditional is a product of Gaussians and every marginal is
    integrable in closed form or by quadrature.
    """

    def __init__(self, centers, scales, offsets):
        self.centers = np.asarray(centers, dtype=np.float64)  # (K, 2, D)
        self.scales = np.asarray(scales, dtype=np.float64)  # (K, 2)
        self.offsets = np.asarray(offsets, dtype=np.float64)  # (K, 2)
        self.num_attributes = self.centers.shape[0]
        self.input_dim = self.centers.shape[2]

    def logits(self, x):
        diff = x[:, None, None, :] - self.centers[None, :, :, :]
        sq = (diff**2).sum(axis=3)
        return -0.5 * sq / self.scales[None, :, :] ** 2 + self.offsets[None, :, :]

    def logits_jacobian(self, x):
        diff = x[:, None, None, :] - self.centers[None, :, :, :]
        return -diff / self.scales[None, :, :, None] ** 2


def quadratic_well_grad_fn(scale: float = 1.0):
    """Energy f(x) = -scale * x^2 / 2 with its gradient, batched."""

    def fn(x):
        e = -0.5 * scale * (x**2).sum(axis=1)
        return e, -scale * x

    return fn
