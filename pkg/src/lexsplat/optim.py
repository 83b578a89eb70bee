"""Minimal adaptive-moment (Adam) optimizer over named numpy arrays.

Supports row insertion/removal so optimizer state can follow scene
densification and pruning: new rows start from zero moments, the
per-array step count is retained.
"""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam with bias correction; returns update directions, callers own
    the learning rate and any per-row scaling."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def direction(self, key: str, grad: np.ndarray) -> np.ndarray:
        """Bias-corrected moment ratio m_hat / (sqrt(v_hat) + eps)."""
        g = np.asarray(grad, dtype=np.float64)
        if key not in self._m:
            self._m[key] = np.zeros_like(g)
            self._v[key] = np.zeros_like(g)
            self._t[key] = 0
        m, v = self._m[key], self._v[key]
        self._t[key] += 1
        t = self._t[key]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * g * g
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        return m_hat / (np.sqrt(v_hat) + self.eps)

    def add_rows(self, key: str, n: int) -> None:
        if key not in self._m or n == 0:
            return
        pad = (n,) + self._m[key].shape[1:]
        self._m[key] = np.concatenate([self._m[key], np.zeros(pad)], axis=0)
        self._v[key] = np.concatenate([self._v[key], np.zeros(pad)], axis=0)

    def keep_rows(self, key: str, keep: np.ndarray) -> None:
        if key in self._m:
            self._m[key] = self._m[key][keep]
            self._v[key] = self._v[key][keep]
