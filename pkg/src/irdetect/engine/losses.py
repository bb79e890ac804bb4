"""Scalar losses and their input gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError

PROB_EPS = 1e-7


def _pair(prediction, target, where):
    p = np.asarray(prediction)
    t = np.asarray(target)
    if p.shape != t.shape:
        raise ShapeMismatchError(where, f"shapes differ: {p.shape} vs {t.shape}")
    return p, t


def mse_loss(prediction, target) -> float:
    """Mean of squared elementwise differences (accumulated in float64)."""
    p, t = _pair(prediction, target, "mse_loss")
    d = p - t
    return float(np.mean(d * d, dtype=np.float64))


def mse_grad(prediction, target) -> np.ndarray:
    p, t = _pair(prediction, target, "mse_loss")
    return (2.0 / p.size) * (p - t)


def kl_gauss(mu, log_variance) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) averaged over latent dimensions."""
    m, lv = _pair(mu, log_variance, "kl_gauss")
    if not (np.isfinite(m).all() and np.isfinite(lv).all()):
        raise ValueError("kl_gauss: non-finite inputs")
    var = np.exp(lv)
    return float(np.mean(0.5 * (m * m + var - 1.0 - lv), dtype=np.float64))


def kl_gauss_grads(mu, log_variance):
    """Gradients of kl_gauss with respect to mu and log_variance."""
    m, lv = _pair(mu, log_variance, "kl_gauss")
    n = m.size
    return m / n, 0.5 * (np.exp(lv) - 1.0) / n


def bce_loss(probability, label) -> float:
    """Binary cross-entropy on probabilities, clamped away from {0, 1}."""
    p = np.clip(np.asarray(probability, dtype=np.result_type(probability, np.float32)),
                PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(label)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)),
                         dtype=np.float64))


def bce_grad(probability, label) -> np.ndarray:
    p = np.asarray(probability)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(label)
    return ((pc - y) / (pc * (1.0 - pc)) / p.size).astype(p.dtype, copy=False)


def bce_with_logits(logits, label) -> np.ndarray:
    """Elementwise stable BCE on raw logits (no reduction)."""
    z = np.asarray(logits)
    y = np.asarray(label)
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))


def bce_with_logits_grad(logits, label) -> np.ndarray:
    z = np.asarray(logits)
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-z))
    return (sig - np.asarray(label)).astype(z.dtype, copy=False)


def smooth_l1(prediction, target) -> float:
    """Huber-style loss: 0.5 d^2 for |d| < 1 else |d| - 0.5, summed."""
    p, t = _pair(prediction, target, "smooth_l1")
    d = np.abs(p - t)
    return float(np.sum(np.where(d < 1.0, 0.5 * d * d, d - 0.5),
                        dtype=np.float64))


def smooth_l1_grad(prediction, target) -> np.ndarray:
    p, t = _pair(prediction, target, "smooth_l1")
    return np.clip(p - t, -1.0, 1.0)
