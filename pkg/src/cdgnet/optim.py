"""Adam optimizer with the published step-decay learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import CdgnetError
from .tensor import Tensor


def lr_at(epoch: int, base_lr: float = 1e-4, decay: float = 0.5,
          step_size: int = 500) -> float:
    """Piecewise-constant schedule: base_lr * decay^floor(epoch/step_size)."""
    if epoch < 0:
        raise CdgnetError(f"epoch must be >= 0, got {epoch}")
    return base_lr * decay ** (epoch // step_size)


class Adam:
    """Bias-corrected Adam over named parameters.

    Orientation-masked kernel taps are re-zeroed after every update so they
    stay exactly 0 regardless of numerical noise.
    """

    def __init__(self, named_params: list[tuple[str, Tensor]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, (name, p) in enumerate(self.named_params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise CdgnetError(f"non-finite gradient for parameter {name}")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
            if p.tap_mask is not None:
                p.data *= p.tap_mask

    def state_arrays(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return self.m, self.v

    def load_state(self, t: int, m: list[np.ndarray], v: list[np.ndarray]) -> None:
        self.t = t
        self.m = [a.astype(p.data.dtype) for a, (_, p) in zip(m, self.named_params)]
        self.v = [a.astype(p.data.dtype) for a, (_, p) in zip(v, self.named_params)]
