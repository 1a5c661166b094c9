"""Datasets for the pruning lab: synthetic Gaussian clusters and CSV files."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParameterError


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    n_classes: int

    def __post_init__(self):
        parts = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise InvalidParameterError("train, validation and test splits overlap")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidParameterError("labels outside the class range")

    @property
    def n_features(self):
        return self.features.shape[1]

    def split(self, name):
        idx = getattr(self, name)
        return self.features[idx], self.labels[idx]


def split_indices(n, rng):
    """Shuffled 70/15/15 split; validation and test sizes are floored, train takes the rest."""
    perm = rng.permutation(n)
    n_val = int(np.floor(0.15 * n))
    n_test = int(np.floor(0.15 * n))
    n_train = n - n_val - n_test
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def make_synthetic_dataset(n_samples=1000, n_features=20, n_classes=2, noise=1.0, seed=0,
                           separation=3.0):
    """Balanced Gaussian clusters around random centres of scale ``separation``."""
    if n_classes < 2:
        raise InvalidParameterError("need at least two classes")
    if n_samples < n_classes or n_features < 1:
        raise InvalidParameterError("need at least one sample per class and one feature")
    if noise < 0:
        raise InvalidParameterError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    centres = separation * rng.standard_normal((n_classes, n_features))
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    features = centres[labels] + noise * rng.standard_normal((n_samples, n_features))
    train, val, test = split_indices(n_samples, rng)
    return Dataset(features, labels, train, val, test, n_classes)


def load_csv_dataset(path, seed=0):
    """Read a CSV with a header row whose last column is an integer label."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] < 2:
        raise InvalidParameterError("the CSV needs at least one feature column and a label column")
    labels_f = table[:, -1]
    labels = labels_f.astype(int)
    if np.any(labels != labels_f) or np.any(labels < 0):
        raise InvalidParameterError("labels must be non-negative integers")
    train, val, test = split_indices(len(labels), np.random.default_rng(seed))
    return Dataset(table[:, :-1], labels, train, val, test, int(labels.max()) + 1)
