"""Adam in ascent form with global-norm gradient clipping.

The objectives in this package are maximized, so the update is
p += lr * mhat / (sqrt(vhat) + eps) with the usual bias-corrected
moment estimates.  Clipping rescales the whole gradient vector before
any moments are touched; the occasional near-failure of a Cholesky
early in training produces spikes that would otherwise poison the
second-moment state.
"""

from __future__ import annotations

import numpy as np

from .tape import NumericError, Tensor


class Adam:
    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float | None = 100.0,
    ):
        if learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.clip_norm = None if clip_norm in (None, 0.0) else float(clip_norm)
        self.t = 0
        self._m = {name: np.zeros_like(p.value) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.value) for name, p in self.params.items()}

    def step(self, grads: dict[int, np.ndarray]) -> float:
        """Apply one ascent update from a tape gradient map; returns the
        pre-clip global gradient norm."""
        picked: dict[str, np.ndarray] = {}
        sq_sum = 0.0
        for name, p in self.params.items():
            g = grads.get(p.tid)
            if g is None:
                g = np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            picked[name] = g
            sq_sum += float(np.sum(g * g))
        norm = float(np.sqrt(sq_sum))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = picked[name] * scale
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value = p.value + self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return norm
