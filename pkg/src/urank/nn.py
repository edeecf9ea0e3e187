"""Small fully connected network with hand-written backprop, plus SGD/Adam."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit


class TrainingDiverged(RuntimeError):
    pass


class MLP:
    """ReLU hidden layers, linear output. Weights are stored (fan_in, fan_out)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None,
                 zero_output: bool = False):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = rng or np.random.default_rng(0)
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        if zero_output:
            self.weights[-1][:] = 0.0

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, X: np.ndarray):
        acts = [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, acts

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, acts: list[np.ndarray], dout: np.ndarray) -> list[np.ndarray]:
        """Gradients aligned with ``params`` given dLoss/dOutput."""
        grads: list[np.ndarray] = []
        delta = dout
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = acts[layer]
            grads.append(delta.sum(axis=0))
            grads.append(a_in.T @ delta)
            if layer:
                delta = (delta @ self.weights[layer].T) * (a_in > 0)
        grads.reverse()
        # reversed order is [W0, b0, W1, b1, ...]
        return grads

    def copy(self) -> "MLP":
        clone = MLP.__new__(MLP)
        clone.sizes = list(self.sizes)
        clone.weights = [W.copy() for W in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def check_finite(self, what: str = "network"):
        if not all(np.all(np.isfinite(p)) for p in self.params):
            raise TrainingDiverged(f"{what}: non-finite parameters")

    def to_dict(self) -> dict:
        return {"layers": [{"shape": list(W.shape), "weights": W.tolist(), "bias": b.tolist()}
                           for W, b in zip(self.weights, self.biases)]}

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        net = cls.__new__(cls)
        net.weights = [np.array(layer["weights"], dtype=float).reshape(layer["shape"])
                       for layer in d["layers"]]
        net.biases = [np.array(layer["bias"], dtype=float) for layer in d["layers"]]
        net.sizes = [net.weights[0].shape[0]] + [W.shape[1] for W in net.weights]
        return net


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def bce_with_logits(z, y, weight=None):
    """Elementwise cross-entropy -y log p - (1-y) log(1-p) with p = sigmoid(z), and d/dz."""
    loss = np.logaddexp(0.0, z) - y * z
    grad = expit(z) - y
    if weight is not None:
        loss, grad = loss * weight, grad * weight
    return loss, grad
