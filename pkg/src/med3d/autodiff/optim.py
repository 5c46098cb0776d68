"""SGD with momentum and Adam.

Both optimizers skip any parameter whose ``grad`` is None.  That is what
keeps decoder-branch routing isolation exact at the byte level: weight
decay and momentum never touch a parameter that did not participate in the
step's graph.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor


class SGD:
    """param <- param - lr * buf, buf <- momentum * buf + grad + wd * param."""

    def __init__(self, params: list[Tensor], lr: float = 0.1,
                 momentum: float = 0.9, weight_decay: float = 0.001):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._buf: dict[int, np.ndarray] = {}
        self.step_count = 0

    def step(self):
        self.step_count += 1
        for p in self.params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeMismatch(
                    f"grad {p.grad.shape} vs param {p.data.shape}")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf = self._buf.get(id(p))
            if buf is None:
                buf = np.zeros_like(p.data)
                self._buf[id(p)] = buf
            buf *= self.momentum
            buf += g
            p.data -= self.lr * buf

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Momentum buffers keyed by parameter index (for checkpoints)."""
        out = {}
        for i, p in enumerate(self.params):
            buf = self._buf.get(id(p))
            if buf is not None:
                out[f"{i}/momentum"] = buf
        return out


class Adam:
    """Bias-corrected first/second moment update."""

    def __init__(self, params: list[Tensor], lr: float = 0.001,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t: dict[int, int] = {}
        self.step_count = 0

    def step(self):
        self.step_count += 1
        for p in self.params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeMismatch(
                    f"grad {p.grad.shape} vs param {p.data.shape}")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            key = id(p)
            if key not in self._m:
                self._m[key] = np.zeros_like(p.data)
                self._v[key] = np.zeros_like(p.data)
                self._t[key] = 0
            self._t[key] += 1
            t = self._t[key]
            m, v = self._m[key], self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, p in enumerate(self.params):
            key = id(p)
            if key in self._m:
                out[f"{i}/exp_avg"] = self._m[key]
                out[f"{i}/exp_avg_sq"] = self._v[key]
                out[f"{i}/step"] = np.array([self._t[key]], dtype=np.float32)
        return out
