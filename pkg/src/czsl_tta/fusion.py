"""Prototype refresh and fused multimodal prediction."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, softmax


class DegenerateDeltaError(ValueError):
    def __init__(self, cls: int):
        super().__init__(f"refreshed prototype for class {cls} has vanishing norm (degenerate delta)")
        self.cls = cls


def adaptive_update_weight(f: np.ndarray, base_prototype: np.ndarray, theta: float):
    """sigmoid(-theta * cos(f, base)); vectorized over prototype rows."""
    s = np.asarray(base_prototype, dtype=np.float64) @ np.asarray(f, dtype=np.float64)
    w = expit(-theta * s)
    return float(w) if np.ndim(w) == 0 else w


def refresh_prototypes(base: np.ndarray, delta: np.ndarray, weights) -> np.ndarray:
    """Row-wise normalize(base + w * delta).

    Rows whose delta is exactly zero come back as ``base`` untouched, so a
    zero-initialized delta reproduces the frozen prototypes bit for bit.
    """
    base = np.asarray(base, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (base.shape[0],))
    u = base + w[:, None] * delta
    norms = np.linalg.norm(u, axis=1)
    bad = np.flatnonzero(~(norms > 1e-12))
    if bad.size:
        raise DegenerateDeltaError(int(bad[0]))
    untouched = ~np.any(delta, axis=1)
    return np.where(untouched[:, None], base, u / norms[:, None])


def affinity(f: np.ndarray, v: np.ndarray, beta: float) -> np.ndarray:
    return np.exp(-beta * (1.0 - v @ f))


def fused_logits(f, t_tilde, v_tilde, alpha: float, beta: float, logit_scale: float = 1.0):
    """Text dot product plus the sharpened visual affinity.

    ``v_tilde=None`` drops the visual term (no visual prototypes available).
    """
    z = (t_tilde @ f) * logit_scale
    if v_tilde is not None and alpha != 0:
        z = z + alpha * affinity(f, v_tilde, beta)
    return z


def predict(f, t_tilde, v_tilde, alpha: float, beta: float, logit_scale: float = 1.0):
    z = fused_logits(np.asarray(f, dtype=np.float64), t_tilde, v_tilde, alpha, beta, logit_scale)
    return softmax(z), z


def pseudo_label(p) -> int:
    # np.argmax returns the first maximum, i.e. the lowest candidate index
    return int(np.argmax(p))
