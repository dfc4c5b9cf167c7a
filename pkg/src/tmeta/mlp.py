"""Two-hidden-layer ReLU perceptron trained by full-batch momentum descent."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import DataError

DIVERGENCE_LOSS = 1e6


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"MLP training diverged at epoch {epoch}: loss {loss:.6g} > {DIVERGENCE_LOSS:g} "
                         "(try a smaller step_size)")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class MlpParams:
    hidden_dims: tuple = (64, 32)
    epochs: int = 500
    step_size: float = 1e-3
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(h) for h in self.hidden_dims)
        if len(dims) != 2 or min(dims) < 1:
            raise DataError("hidden_dims must be two integers >= 1")
        object.__setattr__(self, "hidden_dims", dims)
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if not self.step_size > 0:
            raise DataError("step_size must be > 0")
        if not 0 <= self.momentum < 1:
            raise DataError("momentum must be in [0, 1)")


class Mlp:
    """Layers ``input -> h1 -> h2 -> 1`` with ReLU between them."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def initialize(cls, input_dim: int, hidden_dims, seed=0) -> "Mlp":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        rng = np.random.default_rng(seed)
        dims = [input_dim, *hidden_dims, 1]
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def _forward(self, X):
        acts = [X]
        h = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = np.maximum(z, 0.0) if i < len(self.weights) - 1 else z
            acts.append(h)
        return acts

    def predict(self, X) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=np.float64))[-1][:, 0]

    def loss_and_gradients(self, X, y):
        """Mean squared error and its gradients, ordered like ``weights``/``biases``."""
        acts = self._forward(X)
        n = X.shape[0]
        resid = acts[-1][:, 0] - y
        loss = float(np.mean(resid * resid))
        delta = (2.0 / n) * resid[:, None]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, gw, gb

    def to_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        ws = [np.array(w, dtype=np.float64).reshape(len(w), -1) for w in d["weights"]]
        return cls(ws, [np.array(b, dtype=np.float64) for b in d["biases"]])


def train_mlp(instances: Sequence, params: MlpParams = MlpParams(), history: list | None = None):
    """Fit an :class:`Mlp` to instance targets; ``history`` receives the loss before every update."""
    from .ltr import RankerModel

    if not instances:
        raise DataError("no training instances")
    X = np.array([np.asarray(i.feature, dtype=np.float64) for i in instances])
    y = np.array([float(i.target) for i in instances])
    if X.ndim != 2:
        raise DataError("feature dimension must be constant")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("non-finite features or targets")
    net = Mlp.initialize(X.shape[1], params.hidden_dims, params.seed)
    vw = [np.zeros_like(w) for w in net.weights]
    vb = [np.zeros_like(b) for b in net.biases]
    loss = float("nan")
    for epoch in range(params.epochs):
        loss, gw, gb = net.loss_and_gradients(X, y)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise TrainingDiverged(epoch, loss)
        if history is not None:
            history.append(loss)
        for i in range(len(net.weights)):
            vw[i] = params.momentum * vw[i] - params.step_size * gw[i]
            vb[i] = params.momentum * vb[i] - params.step_size * gb[i]
            net.weights[i] += vw[i]
            net.biases[i] += vb[i]
    final = float(np.mean((net.predict(X) - y) ** 2))
    meta = {"params": asdict(params), "seed": params.seed, "final_loss": final,
            "epochs": params.epochs, "first_loss": history[0] if history else loss}
    return RankerModel("mlp", X.shape[1], net, meta)
