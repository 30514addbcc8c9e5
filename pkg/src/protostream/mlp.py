"""Fully connected softmax classifier trained with plain SGD.

Hidden blocks run affine -> batch norm -> activation -> dropout; the head
is a single affine into a softmax. Everything is numpy, float64 by
default, and deterministic under the config seed. Batch norm keeps
running statistics with momentum 0.9 and falls back to them for
batch-size-1 training steps, where batch variance would be zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

import numpy as np

from .errors import NumericError, UsageError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
ACTIVATIONS = ("relu", "elu")


@dataclass(frozen=True)
class MLPConfig:
    """Architecture and optimizer settings.

    dropout_keep is the keep probability (1.0 disables dropout);
    weight_decay is the L2 coefficient applied inside the SGD step,
    w <- w - lr * (grad + weight_decay * w), on weight matrices only.
    """

    layer_sizes: tuple[int, ...] = ()
    activation: str = "relu"
    dropout_keep: float = 1.0
    weight_decay: float = 0.0
    learning_rate: float = 0.01
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(w) for w in self.layer_sizes))
        if any(w < 1 for w in self.layer_sizes):
            raise UsageError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise UsageError("dropout_keep must be in (0, 1]")
        if self.weight_decay < 0:
            raise UsageError("weight_decay must be non-negative")
        if self.learning_rate < 0:
            raise UsageError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise UsageError("batch_size must be at least 1")


class MLPClassifier:
    """Multinomial MLP with explicit forward/backward passes.

    Weights use He-style fan-in initialization, biases start at zero,
    batch-norm scale/shift at one/zero with running stats (0, 1). Two
    independent seeded generators cover initialization and dropout.
    """

    def __init__(self, config: MLPConfig, dim: int, num_classes: int, dtype=np.float64):
        if dim < 1 or num_classes < 2:
            raise UsageError("need dim >= 1 and num_classes >= 2")
        self.config = config
        self.dim = dim
        self.num_classes = num_classes
        self.dtype = dtype
        self.mode = "train"
        init_rng = np.random.default_rng([config.seed, 0])
        self.rng = np.random.default_rng([config.seed, 1])

        sizes = [dim, *config.layer_sizes, num_classes]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append((init_rng.standard_normal((fan_in, fan_out)) * scale).astype(dtype))
            self.biases.append(np.zeros(fan_out, dtype=dtype))
        hidden = list(config.layer_sizes)
        self.bn_scale = [np.ones(h, dtype=dtype) for h in hidden]
        self.bn_shift = [np.zeros(h, dtype=dtype) for h in hidden]
        self.bn_mean = [np.zeros(h, dtype=dtype) for h in hidden]
        self.bn_var = [np.ones(h, dtype=dtype) for h in hidden]

    # -- modes ---------------------------------------------------------

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    @property
    def num_hidden(self):
        return len(self.config.layer_sizes)

    # -- forward -------------------------------------------------------

    def forward(self, inputs, mode: str | None = None) -> np.ndarray:
        """Class probability rows for a (m, dim) batch.

        Train mode uses batch statistics when m >= 2 and applies dropout
        (consuming the model's dropout generator); eval mode and
        single-sample train batches normalize with running statistics.
        """
        mode = mode or self.mode
        if mode not in ("train", "eval"):
            raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = self._check_inputs(inputs)
        rng = self.rng if (mode == "train" and self.config.dropout_keep < 1.0) else None
        probs, _, _ = self._forward_full(x, train=(mode == "train"), dropout_rng=rng)
        return probs

    def predict(self, inputs) -> np.ndarray:
        """Arg-max class per row in eval mode; ties go to the lowest index."""
        return np.argmax(self.forward(inputs, mode="eval"), axis=1)

    def _check_inputs(self, inputs):
        x = np.asarray(inputs, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise UsageError(f"inputs must be (m, {self.dim}), got {x.shape}")
        return x

    def _forward_full(self, x, train, dropout_rng):
        """Shared forward pass; returns (probs, layer caches, batch stats)."""
        with np.errstate(invalid="ignore", over="ignore"):
            return self._forward_layers(x, train, dropout_rng)

    def _forward_layers(self, x, train, dropout_rng):
        # the isfinite checks below turn numeric blowups into NumericError,
        # so numpy's intermediate inf/nan warnings are suppressed above
        keep = self.config.dropout_keep
        use_batch_stats = train and len(x) >= 2
        h = x
        caches = []
        stats = []
        for i in range(self.num_hidden):
            z = h @ self.weights[i] + self.biases[i]
            if use_batch_stats:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                stats.append((mu, var))
            else:
                mu = self.bn_mean[i]
                var = self.bn_var[i]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv
            u = self.bn_scale[i] * zhat + self.bn_shift[i]
            a = self._activate(u)
            if train and keep < 1.0:
                mask = (dropout_rng.random(a.shape) < keep) / keep
                out = a * mask
            else:
                mask = None
                out = a
            if not np.isfinite(out).all():
                raise NumericError(f"non-finite activation in hidden layer {i}")
            caches.append({"h_in": h, "zhat": zhat, "inv": inv, "u": u, "a": a,
                           "mask": mask, "batch": use_batch_stats})
            h = out
        logits = h @ self.weights[-1] + self.biases[-1]
        if not np.isfinite(logits).all():
            raise NumericError("non-finite logits in output layer")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        probs = np.exp(log_probs)
        caches.append({"h_in": h, "log_probs": log_probs})
        return probs, caches, stats

    def _activate(self, u):
        if self.config.activation == "relu":
            return np.maximum(u, 0.0)
        return np.where(u > 0, u, np.expm1(u))  # elu, alpha = 1

    def _activate_grad(self, u, a):
        if self.config.activation == "relu":
            return (u > 0).astype(self.dtype)
        return np.where(u > 0, 1.0, a + 1.0)

    # -- training ------------------------------------------------------

    def loss_and_gradients(self, inputs, labels, dropout_rng=None):
        """Cross-entropy loss plus gradients for every parameter.

        Pure: parameters and running statistics are untouched. Returns
        (loss, grads dict keyed like named_parameters, batch_stats list).
        """
        x = self._check_inputs(inputs)
        y = np.asarray(labels, dtype=np.int64).ravel()
        if len(y) != len(x) or len(x) == 0:
            raise UsageError("labels must match a non-empty batch")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise UsageError("label outside [0, num_classes)")
        m = len(x)
        probs, caches, stats = self._forward_full(x, train=True, dropout_rng=dropout_rng)
        log_probs = caches[-1]["log_probs"]
        loss = float(-log_probs[np.arange(m), y].mean())
        if not np.isfinite(loss):
            raise NumericError("non-finite training loss")

        grads = {}
        dlogits = probs.copy()
        dlogits[np.arange(m), y] -= 1.0
        dlogits /= m
        h_last = caches[-1]["h_in"]
        grads[f"w{self.num_hidden}"] = h_last.T @ dlogits
        grads[f"b{self.num_hidden}"] = dlogits.sum(axis=0)
        dh = dlogits @ self.weights[-1].T
        for i in range(self.num_hidden - 1, -1, -1):
            c = caches[i]
            if c["mask"] is not None:
                dh = dh * c["mask"]
            du = dh * self._activate_grad(c["u"], c["a"])
            grads[f"bn_scale{i}"] = (du * c["zhat"]).sum(axis=0)
            grads[f"bn_shift{i}"] = du.sum(axis=0)
            dzhat = du * self.bn_scale[i]
            if c["batch"]:
                n = len(x)
                dz = (c["inv"] / n) * (n * dzhat - dzhat.sum(axis=0)
                                       - c["zhat"] * (dzhat * c["zhat"]).sum(axis=0))
            else:
                dz = dzhat * c["inv"]
            grads[f"w{i}"] = c["h_in"].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            dh = dz @ self.weights[i].T
        return loss, grads, stats

    def apply_gradients(self, grads):
        """One SGD step, w <- w - lr * (g + weight_decay * w); the decay
        term applies to weight matrices only."""
        lr = self.config.learning_rate
        wd = self.config.weight_decay
        for i, w in enumerate(self.weights):
            w -= lr * (grads[f"w{i}"] + wd * w)
        for i, b in enumerate(self.biases):
            b -= lr * grads[f"b{i}"]
        for i in range(self.num_hidden):
            self.bn_scale[i] -= lr * grads[f"bn_scale{i}"]
            self.bn_shift[i] -= lr * grads[f"bn_shift{i}"]

    def train_minibatch(self, inputs, labels) -> float:
        """One gradient step on a batch; returns the pre-update loss."""
        if self.mode != "train":
            raise UsageError("train_minibatch requires train mode")
        loss, grads, stats = self.loss_and_gradients(
            inputs, labels,
            dropout_rng=self.rng if self.config.dropout_keep < 1.0 else None)
        self.apply_gradients(grads)
        for i, (mu, var) in enumerate(stats):
            self.bn_mean[i] = BN_MOMENTUM * self.bn_mean[i] + (1.0 - BN_MOMENTUM) * mu
            self.bn_var[i] = BN_MOMENTUM * self.bn_var[i] + (1.0 - BN_MOMENTUM) * var
        return loss

    def named_parameters(self):
        """(name, array) pairs; arrays are live references."""
        out = []
        for i, w in enumerate(self.weights):
            out.append((f"w{i}", w))
        for i, b in enumerate(self.biases):
            out.append((f"b{i}", b))
        for i in range(self.num_hidden):
            out.append((f"bn_scale{i}", self.bn_scale[i]))
            out.append((f"bn_shift{i}", self.bn_shift[i]))
        return out

    # -- persistence ---------------------------------------------------

    def save(self, path):
        """Checkpoint parameters, running stats, config and RNG state."""
        meta = {
            "config": asdict(self.config),
            "dim": self.dim,
            "num_classes": self.num_classes,
            "dtype": np.dtype(self.dtype).str,
            "mode": self.mode,
            "rng_state": self.rng.bit_generator.state,
        }
        arrays = {}
        for i, w in enumerate(self.weights):
            arrays[f"w{i}"] = w
        for i, b in enumerate(self.biases):
            arrays[f"b{i}"] = b
        for i in range(self.num_hidden):
            arrays[f"bn_scale{i}"] = self.bn_scale[i]
            arrays[f"bn_shift{i}"] = self.bn_shift[i]
            arrays[f"bn_mean{i}"] = self.bn_mean[i]
            arrays[f"bn_var{i}"] = self.bn_var[i]
        np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "MLPClassifier":
        with np.load(path) as blob:
            meta = json.loads(bytes(blob["meta"]).decode())
            cfg = meta["config"]
            cfg["layer_sizes"] = tuple(cfg["layer_sizes"])
            model = cls(MLPConfig(**cfg), meta["dim"], meta["num_classes"],
                        dtype=np.dtype(meta["dtype"]))
            model.mode = meta["mode"]
            model.rng.bit_generator.state = meta["rng_state"]
            for i in range(len(model.weights)):
                model.weights[i] = blob[f"w{i}"].copy()
                model.biases[i] = blob[f"b{i}"].copy()
            for i in range(model.num_hidden):
                model.bn_scale[i] = blob[f"bn_scale{i}"].copy()
                model.bn_shift[i] = blob[f"bn_shift{i}"].copy()
                model.bn_mean[i] = blob[f"bn_mean{i}"].copy()
                model.bn_var[i] = blob[f"bn_var{i}"].copy()
        return model


def evaluate_accuracy(model: MLPClassifier, inputs, labels) -> float:
    """Fraction of arg-max predictions matching labels, in eval mode."""
    x = np.asarray(inputs)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if len(x) == 0 or len(x) != len(y):
        raise UsageError("evaluation needs a non-empty, aligned test set")
    previous = model.mode
    model.eval()
    try:
        pred = model.predict(x)
    finally:
        model.mode = previous
    return float((pred == y).mean())


def minibatch_slices(total: int, batch_size: int):
    """Consecutive index ranges covering [0, total) in chunks of
    min(batch_size, total); the final chunk may be smaller."""
    if total < 1:
        return []
    size = min(batch_size, total)
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def fit_offline(model: MLPClassifier, dataset, epochs: int) -> tuple[MLPClassifier, float]:
    """Multi-epoch minibatch SGD over the train split with a seeded
    reshuffle per epoch; returns the model and its final test accuracy."""
    if epochs < 1:
        raise UsageError("epochs must be at least 1")
    x, y = dataset.train_arrays()
    xt, yt = dataset.test_arrays()
    if len(x) == 0:
        raise UsageError("cannot fit on an empty train split")
    rng = np.random.default_rng([model.config.seed, 2])
    model.train()
    for _ in range(epochs):
        perm = rng.permutation(len(x))
        for lo, hi in minibatch_slices(len(x), model.config.batch_size):
            chunk = perm[lo:hi]
            model.train_minibatch(x[chunk], y[chunk])
    return model, evaluate_accuracy(model, xt, yt)
