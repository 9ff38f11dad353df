"""Ascent optimisers with an exponentially decaying step size lr * decay ** i."""

import numpy as np


class Ascent:
    def __init__(self, lr: float, decay: float = 1.0):
        self.lr = lr
        self.decay = decay

    def step_size(self, i: int) -> float:
        return self.lr * self.decay**i

    def step(self, x: np.ndarray, gradient: np.ndarray, i: int) -> np.ndarray:
        return x + self.step_size(i) * gradient


class Adam(Ascent):
    """Adam on the negated objective, i.e. ascent with bias-corrected moments."""

    def __init__(
        self,
        lr: float,
        decay: float = 1.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(lr, decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, x: np.ndarray, gradient: np.ndarray, i: int) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(gradient)
            self.v = np.zeros_like(gradient)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * gradient
        self.v = self.beta2 * self.v + (1 - self.beta2) * gradient**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return x + self.step_size(i) * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, lr: float, decay: float) -> Ascent:
    if name == "adam":
        return Adam(lr, decay)
    if name == "ascent":
        return Ascent(lr, decay)
    raise ValueError(f"unknown optimizer '{name}'")
