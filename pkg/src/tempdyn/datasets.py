"""Deterministic synthetic classification datasets for desk-scale runs.

Inputs are standardized with train-split moments and then row-normalized to
norm sqrt(N), which keeps tangent-kernel diagonal entries O(1) so the initial
logit magnitude is controlled by beta and the init correlation alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    """Train/test split with one-hot labels; immutable by convention."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    seed: int
    descriptor: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.y_train.shape[1]

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]


def _class_sizes(total: int, k: int) -> list:
    # Balanced; the first (total mod k) classes absorb the remainder.
    base, extra = divmod(total, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    Y = np.zeros((labels.size, k))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


def _row_normalize(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return X * (math.sqrt(X.shape[1]) / norms)


def gaussian_blobs(num_classes: int, train_size: int, test_size: int,
                   input_dim: int, separation: float, seed: int) -> Dataset:
    """Isotropic Gaussian classes with means at scaled simplex vertices.

    Means sit on coordinate axes scaled so every pair is `separation`
    apart (requires input_dim >= num_classes); unit covariance.  Both
    splits are standardized with the train moments, then row-normalized.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if input_dim < 2:
        raise ValueError("need at least two input dimensions")
    if input_dim < num_classes:
        raise ValueError("simplex placement requires input_dim >= num_classes")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    means = np.zeros((num_classes, input_dim))
    np.fill_diagonal(means[:, :num_classes], separation / math.sqrt(2.0))

    def draw(total):
        sizes = _class_sizes(total, num_classes)
        labels = np.repeat(np.arange(num_classes), sizes)
        X = means[labels] + rng.standard_normal((total, input_dim))
        return X, labels

    x_train, lab_train = draw(train_size)
    x_test, lab_test = draw(test_size)

    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std[std == 0.0] = 1.0
    x_train = _row_normalize((x_train - mean) / std)
    x_test = _row_normalize((x_test - mean) / std) if test_size else x_test.reshape(0, input_dim)

    descriptor = {
        "generator": "gaussian_blobs",
        "num_classes": num_classes,
        "train_size": train_size,
        "test_size": test_size,
        "input_dim": input_dim,
        "separation": separation,
        "seed": seed,
    }
    return Dataset(x_train, _one_hot(lab_train, num_classes),
                   x_test, _one_hot(lab_test, num_classes) if test_size else
                   np.zeros((0, num_classes)),
                   seed, descriptor)


def shuffle_labels(data: Dataset, seed: int) -> Dataset:
    """Uniformly permute training label rows; inputs and test split untouched."""
    if data.y_train.shape[0] == 0:
        raise ValueError("dataset has no training rows")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 1], dtype=np.uint64)))
    perm = rng.permutation(data.y_train.shape[0])
    descriptor = dict(data.descriptor)
    descriptor["label_shuffle_seed"] = seed
    return Dataset(data.x_train, data.y_train[perm].copy(), data.x_test,
                   data.y_test, data.seed, descriptor)


def save_csv(path, X: np.ndarray, Y: np.ndarray) -> None:
    """Write one split as x1..xN,label rows (label = class index)."""
    labels = np.asarray(Y).argmax(axis=1)
    n = X.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join([f"x{i + 1}" for i in range(n)] + ["label"]) + "\n")
        for row, lab in zip(X, labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")


def load_csv(path) -> Dataset:
    """Parse a x1..xN,label file; class count inferred from the labels."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[-1] != "label" or any(not h.startswith("x") for h in header[:-1]):
        raise ValueError(f"{path}: expected header x1..xN,label")
    n = len(header) - 1
    rows, labels = [], []
    for idx, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != n + 1:
            raise ValueError(f"{path}: line {idx}: expected {n + 1} fields, got {len(parts)}")
        try:
            rows.append([float(v) for v in parts[:-1]])
        except ValueError as exc:
            raise ValueError(f"{path}: line {idx}: non-numeric feature ({exc})") from exc
        try:
            lab = int(parts[-1])
        except ValueError as exc:
            raise ValueError(f"{path}: line {idx}: non-integer label") from exc
        if lab < 0:
            raise ValueError(f"{path}: line {idx}: negative label")
        labels.append(lab)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    labels = np.asarray(labels)
    k = int(labels.max()) + 1
    if k < 2:
        raise ValueError(f"{path}: need at least two classes")
    X = np.asarray(rows, dtype=np.float64)
    descriptor = {"generator": "csv", "path": str(path)}
    return Dataset(X, _one_hot(labels, k), np.zeros((0, n)), np.zeros((0, k)),
                   seed=0, descriptor=descriptor)
