"""First-order optimizers with serializable state."""
from __future__ import annotations

import numpy as np

from .numerics import Tensor


class Optimizer:
    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float):
        self.named = list(named_params)
        self.lr = lr
        self.t = 0

    def state_dict(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state_dict(self, state: dict[str, np.ndarray]):
        raise NotImplementedError


class SGD(Optimizer):
    """Heavy-ball momentum: ``v = mu*v + g; p -= lr*v``."""

    def __init__(self, named_params, lr: float = 1e-3, momentum: float = 0.9):
        super().__init__(named_params, lr)
        self.momentum = momentum
        self.velocity = {n: np.zeros_like(p.data) for n, p in self.named}

    def step(self):
        self.t += 1
        for n, p in self.named:
            if p.grad is None:
                continue
            v = self.velocity[n]
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def state_dict(self):
        out = {f"velocity/{n}": v.copy() for n, v in self.velocity.items()}
        out["t"] = np.array(float(self.t))
        return out

    def load_state_dict(self, state):
        for n in self.velocity:
            self.velocity[n] = np.array(state[f"velocity/{n}"], dtype=np.float64)
        self.t = int(state["t"])


class Adam(Optimizer):
    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(named_params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, p in self.named:
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[n], self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        out = {f"m/{n}": a.copy() for n, a in self.m.items()}
        out.update({f"v/{n}": a.copy() for n, a in self.v.items()})
        out["t"] = np.array(float(self.t))
        return out

    def load_state_dict(self, state):
        for n in self.m:
            self.m[n] = np.array(state[f"m/{n}"], dtype=np.float64)
            self.v[n] = np.array(state[f"v/{n}"], dtype=np.float64)
        self.t = int(state["t"])


def make_optimizer(kind: str, named_params, lr: float, momentum: float = 0.9) -> Optimizer:
    if kind == "sgd":
        return SGD(named_params, lr, momentum)
    if kind == "adam":
        return Adam(named_params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")
