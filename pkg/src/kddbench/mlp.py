"""One-hidden-layer perceptron trained by per-instance back-propagation with momentum.

Weights are stored with the bias in the last column: ``w1`` is M x (N+1)
(input to hidden), ``w2`` is C x (M+1) (hidden to output). The training
objective per instance is the squared error summed over output units.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Any

import numba
import numpy as np

from .model import Estimator
from .rng import SplitMix64

LINEAR = "linear"
SIGMOID = "sigmoid"
TANH = "tanh"
HARDLIM = "hardlim"
HARDLIMS = "hardlims"
TRANSFER = (LINEAR, SIGMOID, TANH, HARDLIM, HARDLIMS)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite error) in epoch {epoch}")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # Split by sign so exp never overflows.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activation(kind: str, x):
    x = np.asarray(x, dtype=np.float64)
    if kind == LINEAR:
        return x.copy()
    if kind == SIGMOID:
        return sigmoid(x)
    if kind in (TANH, "hyperbolic"):
        return np.tanh(x)
    if kind == HARDLIM:
        return (x >= 0).astype(np.float64)
    if kind == HARDLIMS:
        return np.where(x >= 0, 1.0, -1.0)
    raise ValueError(f"unknown transfer function {kind!r}")


@dataclass(frozen=True)
class MlpTopology:
    n_in: int
    n_hidden: int
    n_out: int
    output: str = SIGMOID

    def __post_init__(self):
        if min(self.n_in, self.n_hidden, self.n_out) < 1:
            raise ValueError("every layer needs at least one unit")
        if self.output not in (SIGMOID, LINEAR):
            raise ValueError("output activation must be sigmoid or linear")

    @classmethod
    def default(cls, n_in: int, n_out: int, output: str = SIGMOID) -> "MlpTopology":
        return cls(n_in, max(1, (n_in + n_out) // 2), n_out, output)


@dataclass
class TrainConfig:
    learning_rate: float = 0.3
    momentum: float = 0.2
    validation_threshold: int = 20
    validation_fraction: float = 0.0
    max_epochs: int = 500
    seed: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.validation_threshold < 1:
            raise ValueError("validation threshold must be at least 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation fraction must lie in [0, 1)")


def forward(w1: np.ndarray, w2: np.ndarray, I: np.ndarray, output: str = SIGMOID):
    """(hidden outputs, class scores, probabilities) for one instance or a batch."""
    I = np.asarray(I, dtype=np.float64)
    if I.shape[-1] != w1.shape[1] - 1:
        raise ValueError(f"expected {w1.shape[1] - 1} inputs, got {I.shape[-1]}")
    hidden = sigmoid(I @ w1[:, :-1].T + w1[:, -1])
    o = hidden @ w2[:, :-1].T + w2[:, -1]
    scores = sigmoid(o) if output == SIGMOID else o
    return hidden, scores, normalize_scores(scores)


def normalize_scores(scores: np.ndarray) -> np.ndarray:
    """Scores divided by their sum; negatives count as 0 and an all-zero row is uniform."""
    s = np.clip(np.asarray(scores, dtype=np.float64), 0.0, None)
    total = s.sum(axis=-1, keepdims=True)
    uniform = np.full_like(s, 1.0 / s.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, s / np.where(total > 0, total, 1.0), uniform)


def mse(predictions, targets) -> float:
    """Squared error summed over output units, averaged over instances."""
    p = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    if len(p) == 0:
        raise ValueError("mse of an empty set")
    return float(((t - p) ** 2).sum() / len(p))


def instance_error(w1, w2, x, t, output: str = SIGMOID) -> float:
    _, scores, _ = forward(w1, w2, x, output)
    return float(((np.asarray(t) - scores) ** 2).sum())


def gradient(w1, w2, x, t, output: str = SIGMOID):
    """Exact gradient of ``instance_error`` with respect to (w1, w2)."""
    x = np.asarray(x, dtype=np.float64)
    xb = np.append(x, 1.0)
    h = sigmoid(w1 @ xb)
    hb = np.append(h, 1.0)
    o = w2 @ hb
    yhat = sigmoid(o) if output == SIGMOID else o
    d_out = 2.0 * (yhat - t)
    if output == SIGMOID:
        d_out = d_out * yhat * (1.0 - yhat)
    d_hidden = (w2[:, :-1].T @ d_out) * h * (1.0 - h)
    return np.outer(d_hidden, xb), np.outer(d_out, hb)


@numba.njit(cache=True, nogil=True, inline="always")
def _sig(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True, nogil=True)
def _sgd_epoch(X, T, order, w1, w2, d1, d2, lr, momentum, linear_out):
    """One pass of per-instance updates in ``order``; returns the summed squared error."""
    M, Np1 = w1.shape
    N = Np1 - 1
    C = w2.shape[0]
    h = np.empty(M)
    yhat = np.empty(C)
    dout = np.empty(C)
    dh = np.empty(M)
    err = 0.0
    for r in order:
        x = X[r]
        for j in range(M):
            s = w1[j, N]
            for i in range(N):
                s += w1[j, i] * x[i]
            h[j] = _sig(s)
        for c in range(C):
            s = w2[c, M]
            for j in range(M):
                s += w2[c, j] * h[j]
            yhat[c] = s if linear_out else _sig(s)
            e = yhat[c] - T[r, c]
            err += e * e
            dout[c] = 2.0 * e if linear_out else 2.0 * e * yhat[c] * (1.0 - yhat[c])
        for j in range(M):
            s = 0.0
            for c in range(C):
                s += w2[c, j] * dout[c]
            dh[j] = s * h[j] * (1.0 - h[j])
        for c in range(C):
            for j in range(M):
                d2[c, j] = -lr * dout[c] * h[j] + momentum * d2[c, j]
                w2[c, j] += d2[c, j]
            d2[c, M] = -lr * dout[c] + momentum * d2[c, M]
            w2[c, M] += d2[c, M]
        for j in range(M):
            g = dh[j]
            for i in range(N):
                d1[j, i] = -lr * g * x[i] + momentum * d1[j, i]
                w1[j, i] += d1[j, i]
            d1[j, N] = -lr * g + momentum * d1[j, N]
            w1[j, N] += d1[j, N]
    return err


def init_weights(topology: MlpTopology, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform in [-0.5, 0.5) from the seed's dedicated substream."""
    s = SplitMix64.derive(seed, "mlp", "init")
    M, N, C = topology.n_hidden, topology.n_in, topology.n_out
    w1 = s.random(M * (N + 1)).reshape(M, N + 1) - 0.5
    w2 = s.random(C * (M + 1)).reshape(C, M + 1) - 0.5
    return w1, w2


@dataclass
class TrainingLog:
    rows: list[tuple[int, float, float | None]] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("epoch,train_mse,validation_mse\n")
        for epoch, tr, va in self.rows:
            out.write(f"{epoch},{tr:.17g},{'' if va is None else format(va, '.17g')}\n")
        return out.getvalue()


def train_weights(X: np.ndarray, T: np.ndarray, topology: MlpTopology, config: TrainConfig,
                  weights: tuple[np.ndarray, np.ndarray] | None = None):
    """Run back-propagation; returns (w1, w2, log, epochs run)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    T = np.ascontiguousarray(T, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if X.shape[1] != topology.n_in or T.shape[1] != topology.n_out:
        raise ValueError("data does not match the topology")
    w1, w2 = weights if weights is not None else init_weights(topology, config.seed)
    w1, w2 = w1.copy(), w2.copy()
    d1, d2 = np.zeros_like(w1), np.zeros_like(w2)
    linear = topology.output == LINEAR

    rows = np.arange(len(X))
    n_val = int(len(X) * config.validation_fraction)
    if n_val:
        rows = SplitMix64.derive(config.seed, "mlp", "split").permutation(len(X))
        train_rows, val_rows = rows[:len(X) - n_val], rows[len(X) - n_val:]
    else:
        train_rows, val_rows = rows, rows[:0]
    if len(train_rows) == 0:
        raise ValueError("validation split leaves no training instances")

    log = TrainingLog()
    best = (math.inf, w1.copy(), w2.copy())
    streak = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = SplitMix64.derive(config.seed, "mlp", "epoch", epoch).permutation(len(train_rows))
        err = _sgd_epoch(X, T, train_rows[perm], w1, w2, d1, d2,
                         config.learning_rate, config.momentum, linear)
        if not math.isfinite(err) or not (np.isfinite(w1).all() and np.isfinite(w2).all()):
            raise DivergenceError(epoch)
        val = None
        if n_val:
            _, scores, _ = forward(w1, w2, X[val_rows], topology.output)
            val = mse(scores, T[val_rows])
        log.rows.append((epoch, err / len(train_rows), val))
        if val is not None:
            if val < best[0]:
                best = (val, w1.copy(), w2.copy())
                streak = 0
            else:
                streak += 1
                if streak >= config.validation_threshold:
                    break
    if n_val:
        w1, w2 = best[1], best[2]
    return w1, w2, log, epoch


class MlpModel(Estimator):
    tag = "mlp"
    input_kind = "encoded"

    def __init__(self, w1: np.ndarray, w2: np.ndarray, output: str = SIGMOID,
                 params: dict[str, Any] | None = None, log: TrainingLog | None = None):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        if self.w2.shape[1] != self.w1.shape[0] + 1:
            raise ValueError("weight shapes do not chain")
        self.output = output
        self.params = params or {}
        self.log = log or TrainingLog()

    @property
    def topology(self) -> MlpTopology:
        return MlpTopology(self.w1.shape[1] - 1, self.w1.shape[0], self.w2.shape[0], self.output)

    @classmethod
    def fit(cls, X, y, schema=None, *, learning_rate: float = 0.3, momentum: float = 0.2,
            validation_threshold: int = 20, validation_fraction: float = 0.0, max_epochs: int = 500,
            hidden: int | None = None, output: str = SIGMOID, seed: int = 1,
            n_classes: int | None = None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(y) == 0:
            raise ValueError("empty training set")
        C = n_classes or int(y.max()) + 1
        topo = MlpTopology.default(X.shape[1], C, output) if hidden is None else \
            MlpTopology(X.shape[1], hidden, C, output)
        cfg = TrainConfig(learning_rate, momentum, validation_threshold, validation_fraction,
                          max_epochs, seed)
        T = np.eye(C)[y]
        w1, w2, log, epochs = train_weights(X, T, topo, cfg)
        params = {"learning_rate": learning_rate, "momentum": momentum,
                  "validation_threshold": validation_threshold,
                  "validation_fraction": validation_fraction, "max_epochs": max_epochs,
                  "hidden": topo.n_hidden, "output": output, "seed": seed, "epochs_run": epochs}
        return cls(w1, w2, output, params, log), params

    def forward(self, X: np.ndarray):
        return forward(self.w1, self.w2, X, self.output)

    def predict_distribution(self, X: np.ndarray) -> np.ndarray:
        return self.forward(np.atleast_2d(X))[2]

    def to_arrays(self):
        return {"w1": self.w1, "w2": self.w2}, {**self.params, "output": self.output}

    @classmethod
    def from_arrays(cls, arrays, meta):
        return cls(arrays["w1"], arrays["w2"], meta.get("output", SIGMOID), dict(meta))
