"""Probability estimators: a small ReLU network, a Gini decision tree and oracles.

Every estimator exposes ``predict_proba(X) -> (n, c)`` with simplex rows.
Plug-in predictions take the argmax with ties going to the lowest index.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CheckpointError, DomainError, NumericalError
from .losses import LossSpec, softmax, values_and_logit_grads
from .rng import stream

# ---------------------------------------------------------------------------
# MLP


@dataclass(eq=False)
class MlpEstimator:
    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    @property
    def c(self) -> int:
        return self.widths[-1]

    def logits(self, X) -> np.ndarray:
        H = np.asarray(X, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            H = H @ W + b
            if i < last:
                np.maximum(H, 0.0, out=H)
        return H

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def copy(self) -> "MlpEstimator":
        return MlpEstimator(self.widths, [W.copy() for W in self.weights],
                            [b.copy() for b in self.biases], self.seed)

    def parameters(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b


def mlp_init(widths: Sequence[int], seed: int = 0) -> MlpEstimator:
    """Glorot-uniform weights, zero biases."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or min(widths) < 1:
        raise DomainError(f"need at least input and output widths, got {widths}")
    rng = stream(seed, "mlp_init")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpEstimator(widths, weights, biases, seed)


def mlp_loss_and_grads(model: MlpEstimator, X, y, spec: LossSpec):
    """Mean loss over the batch and its gradient for every weight and bias."""
    X = np.asarray(X, dtype=np.float64)
    acts = [X]
    H = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        H = H @ W + b
        if i < last:
            H = np.maximum(H, 0.0)
        acts.append(H)
    values, dZ = values_and_logit_grads(spec, acts[-1], y)
    n = X.shape[0]
    delta = dZ / n
    gW, gb = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(last, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return float(np.mean(values)), gW, gb, values


def sgd_epoch(model: MlpEstimator, data, spec: LossSpec, lr: float, batch: int = 128, seed: int = 0,
              track: str = "noisy", epoch: int = 0):
    """One shuffled pass of mini-batch SGD, updating ``model`` in place.

    Returns ``(model, mean training loss)``.  A non-finite loss or gradient
    raises :class:`NumericalError` naming the epoch and batch.
    """
    X = data.features
    y = data.labels(track)
    n = X.shape[0]
    if n == 0:
        raise DomainError("cannot train on an empty dataset")
    order = stream(seed, f"sgd-epoch-{epoch}").permutation(n)
    total = 0.0
    for bi, start in enumerate(range(0, n, batch)):
        rows = order[start:start + batch]
        mean, gW, gb, values = mlp_loss_and_grads(model, X[rows], y[rows], spec)
        if not np.isfinite(mean) or not all(np.all(np.isfinite(g)) for g in gW):
            raise NumericalError(
                f"non-finite {spec.kind.value} loss or gradient at epoch {epoch}, batch {bi}",
                epoch=epoch, batch=bi, loss_kind=spec.kind.value)
        for W, b, dW, db in zip(model.weights, model.biases, gW, gb):
            W -= lr * dW
            b -= lr * db
        total += float(values.sum())
    return model, total / n


# ---------------------------------------------------------------------------
# decision tree


@dataclass(eq=False)
class TreeEstimator:
    """Binary tree in flat arrays.  Node ``k`` is a leaf when ``left[k] < 0``."""

    max_depth: int
    c: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    probs: np.ndarray
    depth: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.left[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            k = node[idx]
            go_left = X[idx, self.feature[k]] <= self.threshold[k]
            node[idx] = np.where(go_left, self.left[k], self.right[k])
            active = self.left[node] >= 0
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.probs[self.apply(X)]

    @property
    def n_nodes(self) -> int:
        return self.left.size

    @property
    def fitted_depth(self) -> int:
        return int(self.depth.max())


def _best_split(X, y, c):
    """Lowest weighted Gini over all features and midpoint thresholds."""
    n, d = X.shape
    best = (np.inf, -1, 0.0)
    onehot = np.eye(c)[y]
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        # boundaries between distinct consecutive values
        cut = np.flatnonzero(xs[1:] > xs[:-1])
        if cut.size == 0:
            continue
        counts = np.cumsum(onehot[order], axis=0)
        left = counts[cut]
        nl = (cut + 1).astype(np.float64)
        right = counts[-1] - left
        nr = n - nl
        gini_l = nl - (left * left).sum(axis=1) / nl
        gini_r = nr - (right * right).sum(axis=1) / nr
        score = (gini_l + gini_r) / n
        k = int(np.argmin(score))
        # among equal scores argmin already picks the smallest threshold
        if score[k] < best[0] - 1e-12:
            best = (float(score[k]), j, 0.5 * (xs[cut[k]] + xs[cut[k] + 1]))
    return best[1], best[2]


def tree_fit(data, max_depth: int, track: str = "noisy") -> TreeEstimator:
    """Greedy CART on Gini impurity.

    A node is split whenever it is impure, below ``max_depth`` and has a
    feature taking two distinct values, even if the best split does not
    lower impurity.  Split ties go to the lowest feature, then the lowest
    threshold.
    """
    if max_depth < 0:
        raise DomainError("max_depth must be >= 0")
    X = data.features
    y = data.labels(track)
    c = data.c
    feature, threshold, left, right, probs, depth = [], [], [], [], [], []

    def new_node(rows, dep):
        k = len(feature)
        counts = np.bincount(y[rows], minlength=c).astype(np.float64)
        probs.append(counts / counts.sum() if counts.sum() else np.full(c, 1.0 / c))
        feature.append(0)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        depth.append(dep)
        return k

    stack = [(np.arange(X.shape[0]), 0, new_node(np.arange(X.shape[0]), 0))]
    while stack:
        rows, dep, k = stack.pop()
        if dep >= max_depth or rows.size < 2 or np.max(probs[k]) == 1.0:
            continue
        j, thr = _best_split(X[rows], y[rows], c)
        if j < 0:
            continue
        mask = X[rows, j] <= thr
        lrows, rrows = rows[mask], rows[~mask]
        feature[k], threshold[k] = j, thr
        left[k] = new_node(lrows, dep + 1)
        right[k] = new_node(rrows, dep + 1)
        stack.append((rrows, dep + 1, right[k]))
        stack.append((lrows, dep + 1, left[k]))
    return TreeEstimator(int(max_depth), c, np.array(feature, dtype=np.int64), np.array(threshold),
                         np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                         np.array(probs), np.array(depth, dtype=np.int64))


# ---------------------------------------------------------------------------
# oracles and plug-in classification


@dataclass(eq=False)
class OracleEstimator:
    """Returns a supplied posterior exactly.

    ``field`` is either a callable ``X -> (n, c)`` or a table whose row ``i``
    is the posterior at support point ``i``; with a table, instances are the
    integer point ids in the first feature column.
    """

    field: Callable | np.ndarray

    def predict_proba(self, X) -> np.ndarray:
        if callable(self.field):
            return np.asarray(self.field(X), dtype=np.float64)
        ids = np.asarray(X)
        ids = ids[:, 0] if ids.ndim == 2 else ids
        return np.asarray(self.field, dtype=np.float64)[ids.astype(np.int64)]


def bayes_from_posterior(field) -> OracleEstimator:
    return OracleEstimator(field)


def _proba(estimator, X):
    if hasattr(estimator, "predict_proba"):
        return estimator.predict_proba(X)
    return np.asarray(estimator(X), dtype=np.float64)


def argmax_with_ties(P, tol: float = 1e-12):
    """Lowest-index argmax of each row and a mask of rows whose maximum is shared."""
    P = np.asarray(P, dtype=np.float64)
    pred = np.argmax(P, axis=1)
    top = P[np.arange(P.shape[0]), pred]
    tied = np.sum(P >= (top - tol * np.maximum(1.0, np.abs(top)))[:, None], axis=1) > 1
    return pred, tied


@dataclass(eq=False)
class PluginClassifier:
    estimator: object

    def predict(self, X) -> np.ndarray:
        return np.argmax(_proba(self.estimator, X), axis=1)

    def predict_with_ties(self, X):
        return argmax_with_ties(_proba(self.estimator, X))


def plugin_predict(estimator, X) -> np.ndarray:
    """Lowest-index argmax predictions of ``estimator``."""
    if isinstance(estimator, PluginClassifier):
        return estimator.predict(X)
    return np.argmax(_proba(estimator, X), axis=1)


def evaluate_accuracy(model, dataset, track: str = "clean") -> float:
    """Fraction of plug-in predictions that match the ``track`` labels."""
    y = dataset.labels(track)
    if dataset.n == 0:
        raise DomainError("accuracy of an empty dataset is undefined")
    return float(np.mean(plugin_predict(model, dataset.features) == y))


# ---------------------------------------------------------------------------
# checkpoints

MLP_TAG = b"MLP1"
TREE_TAG = b"TRE1"


def _atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def checkpoint_bytes(model) -> bytes:
    if isinstance(model, MlpEstimator):
        head = MLP_TAG + struct.pack(f"<I{len(model.widths)}Iq", len(model.widths), *model.widths, model.seed)
        body = b"".join(p.astype("<f8").tobytes() for p in model.parameters())
        return head + body
    if isinstance(model, TreeEstimator):
        head = TREE_TAG + struct.pack("<IIIq", model.max_depth, model.c, model.n_nodes, 0)
        cols = [model.feature, model.threshold, model.left, model.right, model.depth]
        body = b"".join(np.asarray(a, dtype="<f8").tobytes() for a in cols)
        return head + body + model.probs.astype("<f8").tobytes()
    raise CheckpointError(f"cannot checkpoint {type(model).__name__}")


def model_from_bytes(raw: bytes):
    tag = raw[:4]
    try:
        if tag == MLP_TAG:
            (k,) = struct.unpack_from("<I", raw, 4)
            widths = struct.unpack_from(f"<{k}I", raw, 8)
            (seed,) = struct.unpack_from("<q", raw, 8 + 4 * k)
            off = 16 + 4 * k
            weights, biases = [], []
            for fi, fo in zip(widths[:-1], widths[1:]):
                W = np.frombuffer(raw, "<f8", fi * fo, off).reshape(fi, fo).astype(np.float64)
                off += 8 * fi * fo
                b = np.frombuffer(raw, "<f8", fo, off).astype(np.float64)
                off += 8 * fo
                weights.append(W)
                biases.append(b)
            if off != len(raw):
                raise CheckpointError(f"checkpoint has {len(raw) - off} trailing bytes")
            return MlpEstimator(tuple(widths), weights, biases, seed)
        if tag == TREE_TAG:
            max_depth, c, m, _ = struct.unpack_from("<IIIq", raw, 4)
            off = 24
            cols = []
            for _ in range(5):
                cols.append(np.frombuffer(raw, "<f8", m, off).astype(np.float64))
                off += 8 * m
            probs = np.frombuffer(raw, "<f8", m * c, off).reshape(m, c).astype(np.float64)
            if off + 8 * m * c != len(raw):
                raise CheckpointError("tree checkpoint length mismatch")
            f, t, lft, rgt, dep = cols
            return TreeEstimator(max_depth, c, f.astype(np.int64), t, lft.astype(np.int64),
                                 rgt.astype(np.int64), probs, dep.astype(np.int64))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    raise CheckpointError(f"unknown checkpoint tag {tag!r}")


def save_checkpoint(model, path) -> None:
    _atomic_write(path, checkpoint_bytes(model))


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return model_from_bytes(raw)
