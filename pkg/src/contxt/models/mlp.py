"""Feed-forward classifier with ReLU hidden layers and activation taps.

Tap points are numbered from the input: tap 0 is the raw feature vector and
tap ``k`` (``1 <= k <= n_hidden``) is the post-ReLU output of hidden layer
``k``.  Inputs may be a single vector ``(n,)`` or a batch ``(N, n)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import DataError, DimensionError, TapError
from ..tensor_core import SeededRng, log_softmax, relu, softmax

Transform = Callable[[np.ndarray], np.ndarray]


def config_digest(config) -> str:
    payload = json.dumps(asdict(config) if hasattr(config, "__dataclass_fields__") else config,
                         sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class MlpClassifier:
    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    train_accuracy: float | None = None
    seed: int | None = None
    config_digest: str = ""

    kind = "mlp"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise DimensionError(f"invalid layer widths {self.widths}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i + 1], self.widths[i]) or b.shape != (self.widths[i + 1],):
                raise DimensionError(f"layer {i} parameters do not match widths {self.widths}")

    @classmethod
    def initialize(cls, widths: Sequence[int], rng: SeededRng) -> "MlpClassifier":
        """He-normal weights, zero biases."""
        weights, biases = [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.normal((n_out, n_in), scale=np.sqrt(2.0 / n_in)))
            biases.append(np.zeros(n_out))
        return cls(tuple(widths), weights, biases)

    @property
    def n_hidden(self) -> int:
        return len(self.widths) - 2

    @property
    def taps(self) -> range:
        return range(0, self.n_hidden + 1)

    def tap_width(self, tap: int) -> int:
        self._check_tap(tap)
        return self.widths[tap]

    def _check_tap(self, tap) -> None:
        if not isinstance(tap, (int, np.integer)) or tap not in self.taps:
            raise TapError(f"unknown tap {tap!r}; MLP taps are {list(self.taps)}")

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.widths[0] or x.ndim not in (1, 2):
            raise DimensionError(f"input shape {x.shape} does not match input width {self.widths[0]}")
        return x

    def forward_with_tap(self, x, tap: int | None = None, transform: Transform | None = None):
        """Run the network, capturing (and optionally replacing) one activation.

        Returns ``(logits, captured)`` where ``captured`` is the activation at
        ``tap`` before ``transform`` was applied (``None`` when no tap given).
        """
        x = self._check_input(x)
        if tap is not None:
            self._check_tap(tap)
        h = x
        captured = None
        n_layers = len(self.weights)
        for i in range(n_layers + 1):
            if i == tap:
                captured = h
                if transform is not None:
                    h = transform(h)
                    if h.shape != captured.shape:
                        raise DimensionError("transform changed the activation shape")
            if i == n_layers:
                break
            z = h @ self.weights[i].T + self.biases[i]
            h = z if i == n_layers - 1 else relu(z)
        return h, captured

    def forward(self, x) -> np.ndarray:
        return self.forward_with_tap(x)[0]

    def capture(self, x, tap: int) -> np.ndarray:
        """Activation at ``tap``, without computing the remaining layers."""
        x = self._check_input(x)
        self._check_tap(tap)
        h = x
        for i in range(tap):
            h = relu(h @ self.weights[i].T + self.biases[i])
        return h

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.forward(x))

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean softmax cross-entropy and its gradients w.r.t. weights and biases."""
        X = self._check_input(X)
        acts = [X]
        h = X
        n_layers = len(self.weights)
        for i in range(n_layers):
            z = h @ self.weights[i].T + self.biases[i]
            h = z if i == n_layers - 1 else relu(z)
            acts.append(h)
        logp = log_softmax(h)
        n = X.shape[0]
        loss = -float(np.mean(logp[np.arange(n), y]))
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        gw = [None] * n_layers
        gb = [None] * n_layers
        for i in reversed(range(n_layers)):
            gw[i] = delta.T @ acts[i]
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (acts[i] > 0)
        return loss, gw, gb

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpClassifier":
        return MlpClassifier(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                             self.train_accuracy, self.seed, self.config_digest)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "widths": list(self.widths)}

    @classmethod
    def from_arrays(cls, descriptor: dict, arrays: list[np.ndarray]) -> "MlpClassifier":
        widths = tuple(descriptor["widths"])
        return cls(widths, list(arrays[0::2]), list(arrays[1::2]))

    def param_shapes(self) -> list[tuple[int, ...]]:
        return [p.shape for p in self.parameters()]


@dataclass(frozen=True)
class MlpTrainConfig:
    hidden: tuple[int, ...] = (256, 256, 256)
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0


def train_mlp(X, y, config: MlpTrainConfig, n_classes: int | None = None) -> MlpClassifier:
    """Train with plain minibatch SGD at a constant learning rate.

    Deterministic for a given ``config.seed``: initialization and per-epoch
    shuffling draw from named substreams of that seed.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("training set is empty")
    if y.shape != (X.shape[0],):
        raise DataError(f"labels shape {y.shape} does not match {X.shape[0]} samples")
    if config.epochs < 0 or config.batch_size < 1:
        raise DataError("epochs must be >= 0 and batch_size >= 1")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    rng = SeededRng(config.seed, "mlp")
    model = MlpClassifier.initialize((X.shape[1], *config.hidden, n_classes), rng.substream("init"))
    shuffle = rng.substream("shuffle")
    lr = config.learning_rate
    n = X.shape[0]
    for _ in range(config.epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, gw, gb = model.loss_and_grads(X[idx], y[idx])
            for i in range(len(model.weights)):
                model.weights[i] -= lr * gw[i]
                model.biases[i] -= lr * gb[i]
    model.train_accuracy = float(np.mean(np.argmax(model.forward(X), axis=-1) == y))
    model.seed = config.seed
    model.config_digest = config_digest(config)
    return model
