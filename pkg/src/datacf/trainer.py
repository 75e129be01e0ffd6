"""From-scratch multilayer perceptron with bit-reproducible seeded training.

The architecture and hyperparameters are held fixed across every dataset
regime of an experiment, so two trainings differ only through their data.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._hashing import sha256_hex
from .synth import Sample, SampleId, TestSet

ACTIVATIONS = ("relu", "tanh")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    learning_rate: float = 0.01
    epochs: int = 15
    batch_size: int = 32
    init_seed: int = 0
    shuffle_seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 3:
            raise ValueError("layer_sizes needs input, at least one hidden layer, and output")
        if any(n < 1 for n in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def digest(self) -> str:
        return sha256_hex(self)


# ---------------------------------------------------------------------------
# numerics


def init_params(layer_sizes: Sequence[int], seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Uniform fan-in initialization, ``W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        params.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return params


def _act(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z, a, name):
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - a * a


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(params, X: np.ndarray, activation: str = "relu") -> np.ndarray:
    """Logits for a batch."""
    h = X
    for W, b in params[:-1]:
        h = _act(h @ W + b, activation)
    W, b = params[-1]
    return h @ W + b


def loss_and_grads(params, X: np.ndarray, y: np.ndarray, activation: str = "relu"):
    """Mean softmax cross-entropy over the batch and its gradient per layer."""
    zs, hs = [], [X]
    h = X
    for W, b in params[:-1]:
        z = h @ W + b
        h = _act(z, activation)
        zs.append(z)
        hs.append(h)
    W, b = params[-1]
    logits = h @ W + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    n = X.shape[0]
    loss = float(np.mean(log_norm - shifted[np.arange(n), y]))

    delta = np.exp(shifted - log_norm[:, None])
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        grads[layer] = (hs[layer].T @ delta, delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ W.T) * _act_grad(zs[layer - 1], hs[layer], activation)
    return loss, grads


# ---------------------------------------------------------------------------
# estimator


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """Minibatch-SGD multilayer perceptron with a fixed class count.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
    n_classes : int or None
        Width of the output layer. ``None`` infers ``max(y) + 1`` at fit time;
        set it explicitly when a training set may miss some classes.
    activation : {"relu", "tanh"}
    learning_rate, epochs, batch_size : SGD settings, no early stopping.
    init_seed, shuffle_seed : int
        Seeds for weight initialization and per-epoch shuffling.
    """

    def __init__(self, hidden_layer_sizes=(64, 64), n_classes=None, activation="relu",
                 learning_rate=0.01, epochs=15, batch_size=32, init_seed=0, shuffle_seed=1):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.n_classes = n_classes
        self.activation = activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.init_seed = init_seed
        self.shuffle_seed = shuffle_seed

    @classmethod
    def from_config(cls, config: ModelConfig) -> "MLPClassifier":
        return cls(hidden_layer_sizes=config.layer_sizes[1:-1], n_classes=config.n_classes,
                   activation=config.activation, learning_rate=config.learning_rate,
                   epochs=config.epochs, batch_size=config.batch_size,
                   init_seed=config.init_seed, shuffle_seed=config.shuffle_seed)

    def to_config(self, n_features: int | None = None) -> ModelConfig:
        n_features = n_features if n_features is not None else self.n_features_in_
        n_classes = self.n_classes if self.n_classes is not None else len(self.classes_)
        return ModelConfig((n_features, *self.hidden_layer_sizes, n_classes), self.activation,
                           self.learning_rate, self.epochs, self.batch_size,
                           self.init_seed, self.shuffle_seed)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        y = y.astype(np.int64)
        if y.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if y.max() >= k:
            raise ValueError(f"label {int(y.max())} >= n_classes={k}")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.arange(k)
        cfg = self.to_config(X.shape[1])

        params = init_params(cfg.layer_sizes, cfg.init_seed)
        self.loss_curve_ = []
        with np.errstate(over="ignore", invalid="ignore"):
            self._sgd(params, X, y, cfg)
        self.params_ = params
        return self

    def _sgd(self, params, X, y, cfg):
        rng = np.random.default_rng(cfg.shuffle_seed)
        n = X.shape[0]
        lr = cfg.learning_rate
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for batch, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                loss, grads = loss_and_grads(params, X[idx], y[idx], cfg.activation)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(epoch, batch, loss)
                total += loss * len(idx)
                for (W, b), (gW, gb) in zip(params, grads):
                    W -= lr * gW
                    b -= lr * gb
            self.loss_curve_.append(total / n)

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return forward(self.params_, X, self.activation)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        # np.argmax breaks ties toward the lowest class index
        return np.argmax(self.decision_function(X), axis=1)


# ---------------------------------------------------------------------------
# functional surface used by the experiment runner


@dataclass(frozen=True)
class TrainedModel:
    params: tuple[tuple[np.ndarray, np.ndarray], ...] = field(repr=False, compare=False)
    config: ModelConfig
    dataset_fingerprint: str
    loss_curve: tuple[float, ...] = field(repr=False, compare=False, default=())

    def predict(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.config.n_features:
            raise DimensionMismatchError(
                f"X has {X.shape[1]} features, model expects {self.config.n_features}")
        return np.argmax(forward(self.params, X, self.config.activation), axis=1)

    def weight_hash(self) -> str:
        h = hashlib.sha256()
        for W, b in self.params:
            h.update(np.ascontiguousarray(W).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class EvalRecord:
    sample_id: SampleId
    label: int
    predicted: int

    @property
    def correct(self) -> bool:
        return self.predicted == self.label


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    classes: tuple[int, ...]
    per_class_f1: tuple[float, ...]
    macro_f1: float


def dataset_fingerprint(ids: Sequence[SampleId]) -> str:
    return sha256_hex([[s.class_index, s.draw_index] for s in ids])


def train_arrays(X: np.ndarray, y: np.ndarray, config: ModelConfig,
                 fingerprint: str = "") -> TrainedModel:
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if X.shape[1] != config.n_features:
        raise DimensionMismatchError(
            f"samples have {X.shape[1]} features, config expects {config.n_features}")
    est = MLPClassifier.from_config(config).fit(X, y)
    return TrainedModel(tuple(est.params_), config, fingerprint, tuple(est.loss_curve_))


def train(dataset: Sequence[Sample], config: ModelConfig) -> TrainedModel:
    """Fit a fresh network on ``dataset`` in the given order."""
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    X = np.stack([s.features for s in dataset])
    y = np.array([s.label for s in dataset], dtype=np.int64)
    return train_arrays(X, y, config, dataset_fingerprint([s.id for s in dataset]))


def macro_f1(predicted: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Accuracy, per-class F1, and their macro average.

    The average runs over classes present in ``labels``. A class with no
    true positives gets F1 = 0 (the 0/0 case included).
    """
    pred = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.size == 0 or pred.shape != true.shape:
        raise ValueError("need equally sized, non-empty prediction and label vectors")
    classes = tuple(int(c) for c in np.unique(true))
    f1 = []
    for c in classes:
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        f1.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    accuracy = int(np.sum(pred == true)) / pred.size
    return Metrics(accuracy, classes, tuple(f1), float(np.mean(f1)))


def evaluate(model: TrainedModel, test: TestSet) -> tuple[list[EvalRecord], Metrics]:
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = model.predict(test.X)
    records = [EvalRecord(sid, int(lbl), int(p)) for sid, lbl, p in zip(test.ids, test.y, pred)]
    return records, macro_f1(pred, test.y)


RECORD_HEADER = ("sample_class", "draw_index", "predicted", "correct")


def write_records(records: Sequence[EvalRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([r.sample_id.class_index, r.sample_id.draw_index, r.predicted, int(r.correct)])


def read_records(path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = tuple(next(rows))
        if header != RECORD_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for cls, idx, pred, correct in rows:
            rec = EvalRecord(SampleId(int(cls), int(idx)), int(cls), int(pred))
            if rec.correct != bool(int(correct)):
                raise ValueError(f"{path}: inconsistent correct flag for {rec.sample_id}")
            out.append(rec)
    return out


def dump_weights(model: TrainedModel, path) -> None:
    """Debug dump: ``.npz`` with arrays ``W0, b0, W1, b1, ...``."""
    arrays = {}
    for i, (W, b) in enumerate(model.params):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)
