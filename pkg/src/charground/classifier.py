"""Feedforward softmax classifier over concatenated span features.

One instance of this machinery is trained per labeling task: validity
(K=2), spatial relation (K=6), temporal span (K=2), narrative tense (K=2).
The network is at most one sigmoid hidden layer followed by an affine
output layer and a softmax; training minimizes mean cross-entropy with
plain mini-batch gradient descent (Adam is available behind a config
flag). Hyperparameters are tuned on the dev split of a fixed 70/10/20
partition by sweeping epoch count (1..15 in faithful runs), hidden layer
count {0, 1}, and context width {10, 50, 100}; "early stopping" is
realized as that epoch sweep.

All gradients are analytic and float64; everything is deterministic given
the config seed (named sub-streams for init and shuffling, a separate
stream for the split).
"""

from __future__ import annotations

import copy
import json
import warnings
from dataclasses import dataclass, field, replace, asdict
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .util import atomic_write_text, substream

PROB_FLOOR = 1e-12  # cross-entropy clamp for zero predicted probability


class ClassifierError(ValueError):
    pass


class GridError(ClassifierError):
    pass


# ---------------------------------------------------------------------------
# Configs and data containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. max_epochs stays in 1..15 for faithful runs;
    tests may exceed it (e.g. the overfitting check uses 200 epochs, lr 0.1)."""

    learning_rate: float = 1e-5
    max_epochs: int = 15
    batch_size: int = 32
    context_width: int = 100
    hidden_layers: int = 0
    hidden_width: int = 256
    rng_seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ClassifierError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ClassifierError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ClassifierError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.context_width <= 0:
            raise ClassifierError(f"context_width must be positive, got {self.context_width}")
        if self.hidden_layers not in (0, 1):
            raise ClassifierError(f"hidden_layers must be 0 or 1, got {self.hidden_layers}")
        if self.hidden_width < 1:
            raise ClassifierError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.optimizer not in ("sgd", "adam"):
            raise ClassifierError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


@dataclass(frozen=True)
class SplitSpec:
    """Fractions of a 3-way partition; defaults 70% train, 10% dev, 20% test."""

    train: float = 0.70
    dev: float = 0.10
    test: float = 0.20
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name, frac in (("train", self.train), ("dev", self.dev), ("test", self.test)):
            if frac < 0:
                raise ClassifierError(f"{name} fraction must be >= 0, got {frac}")
        if abs(self.train + self.dev + self.test - 1.0) > 1e-9:
            raise ClassifierError("split fractions must sum to 1")


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    dev: np.ndarray
    test: np.ndarray


def split_indices(n: int, spec: SplitSpec) -> SplitIndices:
    """Seeded shuffle, then cut: sizes land within one example of the fractions."""
    if n <= 0:
        raise ClassifierError("cannot split an empty dataset")
    order = substream(spec.rng_seed, "split").permutation(n)
    n_train = int(np.floor(spec.train * n + 0.5))
    n_dev = int(np.floor(spec.dev * n + 0.5))
    n_train = min(n_train, n)
    n_dev = min(n_dev, n - n_train)
    return SplitIndices(
        train=order[:n_train],
        dev=order[n_train : n_train + n_dev],
        test=order[n_train + n_dev :],
    )


@dataclass
class Dataset:
    """Aligned pair ids, feature matrix (n, 2d) and string labels."""

    pair_ids: list[str]
    x: np.ndarray
    labels: list[str]

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ClassifierError(f"features must be 2-D, got shape {self.x.shape}")
        if not (len(self.pair_ids) == len(self.x) == len(self.labels)):
            raise ClassifierError("pair_ids, features and labels must align")

    @classmethod
    def from_examples(
        cls, examples: Sequence[tuple[np.ndarray, str]], pair_ids: Sequence[str] | None = None
    ) -> "Dataset":
        if not examples:
            raise ClassifierError("dataset is empty")
        xs, labels = zip(*examples)
        ids = list(pair_ids) if pair_ids is not None else [str(i) for i in range(len(examples))]
        return cls(pair_ids=ids, x=np.stack(xs), labels=list(labels))

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            pair_ids=[self.pair_ids[i] for i in indices],
            x=self.x[indices],
            labels=[self.labels[i] for i in indices],
        )


def _as_dataset(dataset) -> Dataset:
    if isinstance(dataset, Dataset):
        return dataset
    return Dataset.from_examples(list(dataset))


# ---------------------------------------------------------------------------
# Network parameters and forward/backward math
# ---------------------------------------------------------------------------

@dataclass
class MLPParams:
    """Affine layers as (weight, bias) with x @ W + b; sigmoid between layers,
    softmax after the last."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ClassifierError("at least one layer required")
        if len(self.layers) > 2:
            raise ClassifierError("at most one hidden layer is supported")
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ClassifierError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and self.layers[i - 1][0].shape[1] != w.shape[0]:
                raise ClassifierError(f"layer {i}: input dim does not chain from layer {i - 1}")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def hidden_layers(self) -> int:
        return len(self.layers) - 1

    def copy(self) -> "MLPParams":
        return MLPParams([(w.copy(), b.copy()) for w, b in self.layers])


def init_params(input_dim: int, output_dim: int, config: TrainConfig) -> MLPParams:
    """Uniform(-0.05, 0.05) initialization from the seeded init stream."""
    rng = substream(config.rng_seed, "init")
    dims = [input_dim]
    if config.hidden_layers == 1:
        dims.append(config.hidden_width)
    dims.append(output_dim)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = rng.uniform(-0.05, 0.05, size=(d_in, d_out))
        b = rng.uniform(-0.05, 0.05, size=d_out)
        layers.append((w, b))
    return MLPParams(layers)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def _forward_cached(params: MLPParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns per-layer activations (inputs to each layer) and the probs."""
    activations = [x]
    h = x
    for w, b in params.layers[:-1]:
        h = sigmoid(h @ w + b)
        activations.append(h)
    w_out, b_out = params.layers[-1]
    return activations, softmax(h @ w_out + b_out)


def forward(params: MLPParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a single feature vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != params.input_dim:
        raise ClassifierError(
            f"feature dim {batch.shape[1]} does not match network input {params.input_dim}"
        )
    _, probs = _forward_cached(params, batch)
    return probs[0] if single else probs


def cross_entropy(probs: np.ndarray, gold: int) -> float:
    """-log p[gold], with p clamped below at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if not (0 <= gold < probs.shape[-1]):
        raise ClassifierError(f"gold index {gold} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[gold], PROB_FLOOR)))


def batch_loss(params: MLPParams, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy of a batch."""
    probs = forward(params, np.atleast_2d(x))
    picked = np.maximum(probs[np.arange(len(probs)), y], PROB_FLOOR)
    return float(-np.log(picked).mean())


def gradients(
    params: MLPParams, x: np.ndarray, y: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Analytic gradient of the mean batch cross-entropy, shaped like params."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    if len(x) == 0:
        raise ClassifierError("gradient of an empty batch")
    n = len(x)
    activations, probs = _forward_cached(params, x)

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        a_in = activations[i]
        grads.append((a_in.T @ delta, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ w.T) * a_in * (1.0 - a_in)
    grads.reverse()
    return grads


# ---------------------------------------------------------------------------
# Optimizers and the fitting loop
# ---------------------------------------------------------------------------

class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: MLPParams, grads) -> None:
        for (w, b), (gw, gb) in zip(params.layers, grads):
            w -= self.lr * gw
            b -= self.lr * gb


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: MLPParams, grads) -> None:
        if self.m is None:
            self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
            self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(params.layers, grads, self.m, self.v):
            for param, grad, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
                m *= self.beta1
                m += (1 - self.beta1) * grad
                v *= self.beta2
                v += (1 - self.beta2) * grad**2
                param -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def fit(
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    output_dim: int,
    after_epoch: Callable[[int, MLPParams], None] | None = None,
) -> MLPParams:
    """Mini-batch gradient descent for max_epochs epochs.

    Deterministic for a given config seed: initialization and the per-epoch
    shuffles consume fixed named streams, so the state after epoch e does
    not depend on how many epochs follow it.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.intp)
    if len(x) == 0:
        raise ClassifierError("training set is empty")
    if len(np.unique(y)) < 2:
        warnings.warn("training set has a single class; the model will be degenerate")
    params = init_params(x.shape[1], output_dim, config)
    optimizer = _Adam(config.learning_rate) if config.optimizer == "adam" else _Sgd(config.learning_rate)
    shuffle_rng = substream(config.rng_seed, "shuffle")
    n = len(x)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            optimizer.step(params, gradients(params, x[batch], y[batch]))
        if after_epoch is not None:
            after_epoch(epoch, params)
    return params


# ---------------------------------------------------------------------------
# Task-level training, prediction, grid search
# ---------------------------------------------------------------------------

@dataclass
class TrainedModel:
    params: MLPParams
    task: str
    vocab: list[str]
    config: TrainConfig

    def __post_init__(self) -> None:
        if len(self.vocab) != self.params.output_dim:
            raise ClassifierError(
                f"vocabulary size {len(self.vocab)} != output dim {self.params.output_dim}"
            )


@dataclass
class TrainResult:
    model: TrainedModel
    dev_accuracy: list[float]
    split: SplitIndices


def _encode_labels(labels: Sequence[str], vocab: Sequence[str] | None) -> tuple[list[str], np.ndarray]:
    if vocab is None:
        vocab = sorted(set(labels))
    vocab = list(vocab)
    index = {label: i for i, label in enumerate(vocab)}
    try:
        y = np.array([index[label] for label in labels], dtype=np.intp)
    except KeyError as exc:
        raise ClassifierError(f"label {exc.args[0]!r} not in vocabulary {vocab}") from None
    return vocab, y


def predict(model: TrainedModel, x: np.ndarray) -> tuple[str, np.ndarray]:
    """Argmax label (ties to the lowest label index) plus the probabilities."""
    probs = forward(model.params, x)
    if probs.ndim != 1:
        raise ClassifierError("predict takes a single feature vector; use predict_batch")
    return model.vocab[int(np.argmax(probs))], probs


def predict_batch(model: TrainedModel, x: np.ndarray) -> tuple[list[str], np.ndarray]:
    probs = np.atleast_2d(forward(model.params, x))
    picks = probs.argmax(axis=1)
    return [model.vocab[i] for i in picks], probs


def _accuracy_on(params: MLPParams, vocab: list[str], ds: Dataset) -> float:
    if len(ds) == 0:
        return float("nan")
    probs = forward(params, ds.x)
    picks = np.atleast_2d(probs).argmax(axis=1)
    gold = np.array([vocab.index(label) for label in ds.labels])
    return float((picks == gold).mean())


def train(
    dataset,
    split: SplitSpec,
    config: TrainConfig,
    task: str = "model",
    vocab: Sequence[str] | None = None,
) -> TrainResult:
    """Split, fit for config.max_epochs, and record the per-epoch dev accuracy."""
    ds = _as_dataset(dataset)
    vocab, y = _encode_labels(ds.labels, vocab)
    parts = split_indices(len(ds), split)
    train_ds = ds.subset(parts.train)
    dev_ds = ds.subset(parts.dev)
    _, y_train = _encode_labels(train_ds.labels, vocab)

    trace: list[float] = []

    def after_epoch(_epoch: int, params: MLPParams) -> None:
        trace.append(_accuracy_on(params, vocab, dev_ds))

    params = fit(train_ds.x, y_train, config, len(vocab), after_epoch=after_epoch)
    model = TrainedModel(params=params, task=task, vocab=vocab, config=config)
    return TrainResult(model=model, dev_accuracy=trace, split=parts)


@dataclass
class GridPoint:
    context_width: int
    hidden_layers: int
    epochs: int
    dev_accuracy: float


@dataclass
class GridResult:
    best_config: TrainConfig
    model: TrainedModel
    points: list[GridPoint]


def grid_search(
    datasets_by_width: Mapping[int, Dataset],
    split: SplitSpec,
    base_config: TrainConfig,
    task: str = "model",
    vocab: Sequence[str] | None = None,
    epochs: Iterable[int] = range(1, 16),
    hidden_layers: Iterable[int] = (0, 1),
    widths: Iterable[int] = (10, 50, 100),
) -> GridResult:
    """Sweep (epochs, hidden layers, context width), maximizing dev accuracy.

    One fit per (width, layers) evaluates every epoch count in its trace,
    which is exact because fitting is epoch-prefix deterministic. Ties are
    broken toward fewer epochs, then fewer layers, then smaller width.
    """
    widths = sorted(set(widths))
    epoch_set = sorted(set(epochs))
    if not epoch_set or epoch_set[0] < 1:
        raise GridError("epoch grid must contain positive epoch counts")
    for width in widths:
        if width not in datasets_by_width:
            raise GridError(f"no embeddings/dataset for context width {width}")

    lengths = {w: len(datasets_by_width[w]) for w in widths}
    if len(set(lengths.values())) != 1:
        raise GridError(f"datasets disagree in size across widths: {lengths}")

    first = datasets_by_width[widths[0]]
    vocab_fixed, _ = _encode_labels(first.labels, vocab)

    points: list[GridPoint] = []
    best_key: tuple | None = None
    best_params: MLPParams | None = None
    best_cfg: TrainConfig | None = None

    for width in widths:
        ds = datasets_by_width[width]
        if ds.labels != first.labels:
            raise GridError(f"labels for width {width} are not aligned across widths")
        parts = split_indices(len(ds), split)
        train_ds = ds.subset(parts.train)
        dev_ds = ds.subset(parts.dev)
        if len(dev_ds) == 0:
            raise GridError("dev split is empty; cannot tune hyperparameters")
        _, y_train = _encode_labels(train_ds.labels, vocab_fixed)
        for hl in sorted(set(hidden_layers)):
            run_cfg = replace(
                base_config,
                context_width=width,
                hidden_layers=hl,
                max_epochs=epoch_set[-1],
            )

            def after_epoch(epoch: int, params: MLPParams) -> None:
                nonlocal best_key, best_params, best_cfg
                if epoch not in epoch_set:
                    return
                acc = _accuracy_on(params, vocab_fixed, dev_ds)
                points.append(GridPoint(width, hl, epoch, acc))
                key = (-acc, epoch, hl, width)
                if best_key is None or key < best_key:
                    best_key = key
                    best_params = params.copy()
                    best_cfg = replace(run_cfg, max_epochs=epoch)

            fit(train_ds.x, y_train, run_cfg, len(vocab_fixed), after_epoch=after_epoch)

    assert best_params is not None and best_cfg is not None
    model = TrainedModel(params=best_params, task=task, vocab=vocab_fixed, config=best_cfg)
    return GridResult(best_config=best_cfg, model=model, points=points)


# ---------------------------------------------------------------------------
# Model files: JSON in, JSON out, bit-identical predictions after reload
# ---------------------------------------------------------------------------

def model_to_dict(model: TrainedModel) -> dict:
    dims = [model.params.input_dim]
    for w, _ in model.params.layers[:-1]:
        dims.append(w.shape[1])
    dims.append(model.params.output_dim)
    return {
        "task": model.task,
        "label_vocab": model.vocab,
        "dims": dims,
        "hidden_layers": model.params.hidden_layers,
        "hidden_width": model.config.hidden_width,
        "weights": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in model.params.layers
        ],
        "config": asdict(model.config),
        "seed": model.config.rng_seed,
    }


def model_from_dict(obj: dict) -> TrainedModel:
    try:
        layers = [
            (np.array(layer["w"], dtype=np.float64), np.array(layer["b"], dtype=np.float64))
            for layer in obj["weights"]
        ]
        config = TrainConfig(**obj["config"])
        model = TrainedModel(
            params=MLPParams(layers),
            task=str(obj["task"]),
            vocab=[str(v) for v in obj["label_vocab"]],
            config=config,
        )
    except (KeyError, TypeError) as exc:
        raise ClassifierError(f"malformed model file: {exc}") from exc
    return model


def save_model(model: TrainedModel, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model), sort_keys=True, indent=2) + "\n")


def load_model(path: str | Path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
