"""Learned opcode-category embeddings with mean pooling.

Each contract is a sequence of category ids. A trainable table maps the
category vocabulary into a dense space; a contract's vector is the mean of
its rows. Because mean pooling is linear, that vector equals the contract's
normalised category histogram multiplied by the table, so the table plus the
logistic head form a two-layer network that the supervised trainer (and the
gradient checker) operate on directly.
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import nn
from .disasm import DEFAULT_SCHEME

logger = logging.getLogger(__name__)

__all__ = [
    "CategoryEmbedder",
    "sequence_histogram",
    "embed_sequence",
    "write_embeddings_csv",
    "read_embeddings_csv",
]


def sequence_histogram(category_ids, n_categories: int) -> np.ndarray:
    """Normalised category counts; an empty sequence gives the zero vector."""
    hist = np.zeros(n_categories, dtype=np.float64)
    ids = np.asarray(list(category_ids), dtype=np.int64)
    if ids.size == 0:
        return hist
    if ids.min() < 0 or ids.max() >= n_categories:
        raise ValueError(f"category id out of range 0..{n_categories - 1}")
    counts = np.bincount(ids, minlength=n_categories)
    return counts / ids.size


def embed_sequence(category_ids, table: np.ndarray) -> np.ndarray:
    """Mean-pool a category sequence through an embedding table.

    An empty sequence embeds to the zero vector (logged as a warning since a
    contract with no code is usually an upstream problem).
    """
    ids = list(category_ids)
    if not ids:
        logger.warning("embedding an empty category sequence as the zero vector")
        return np.zeros(table.shape[1], dtype=np.float64)
    hist = sequence_histogram(ids, table.shape[0])
    return hist @ table


class CategoryEmbedder(BaseEstimator, TransformerMixin):
    """Supervised embedding table with a logistic classification head.

    fit() trains table + head jointly with Adam on binary cross entropy
    (labels: 1 = illicit); transform() returns mean-pooled contract vectors.
    """

    def __init__(
        self,
        n_categories: int = DEFAULT_SCHEME.size,
        dim: int = 50,
        epochs: int = 100,
        batch_size: int = 32,
        lr: float = 1e-3,
        random_state: int | None = None,
    ):
        self.n_categories = n_categories
        self.dim = dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def _histograms(self, sequences) -> np.ndarray:
        return np.stack([sequence_histogram(s, self.n_categories) for s in sequences])

    def fit(self, sequences, y):
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        if set(np.unique(y)) - {0.0, 1.0}:
            raise ValueError("labels must be binary 0/1 (1 = illicit)")
        H = self._histograms(sequences)
        if H.shape[0] != y.shape[0]:
            raise ValueError("sequences and labels disagree in length")
        n_empty = int((H.sum(axis=1) == 0).sum())
        if n_empty:
            logger.warning("%d empty sequences in embedding training set", n_empty)

        rng = np.random.default_rng(self.random_state)
        table_layer = nn.Dense(self.n_categories, self.dim, rng, bias=False)
        head = nn.Dense(self.dim, 1, rng)
        self.network_ = nn.Network([table_layer, head, nn.Sigmoid()])
        loss = nn.BCELoss()
        optimizer = nn.Adam(self.network_, lr=self.lr)

        n = H.shape[0]
        self.training_loss_ = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                out = self.network_.forward(H[idx])
                self.network_.backward(loss.grad(out, y[idx]))
                optimizer.step()
            self.training_loss_.append(loss.value(self.network_.forward(H), y))

        self._table_layer = table_layer
        self._head = head
        return self

    @property
    def table_(self) -> np.ndarray:
        self._check_fitted()
        return self._table_layer.W

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("CategoryEmbedder must be fitted before use")

    def transform(self, sequences) -> np.ndarray:
        self._check_fitted()
        H = self._histograms(sequences)
        empties = H.sum(axis=1) == 0
        if empties.any():
            logger.warning("%d empty sequences embedded as zero vectors", int(empties.sum()))
        return H @ self.table_

    def predict_proba(self, sequences) -> np.ndarray:
        self._check_fitted()
        return self.network_.forward(self._histograms(sequences)).ravel()

    def predict(self, sequences) -> np.ndarray:
        return (self.predict_proba(sequences) > 0.5).astype(np.int64)

    def save(self, path: str | Path) -> None:
        self._check_fitted()
        nn.save_model(
            self.network_,
            path,
            meta={
                "model": "category-embedder",
                "n_categories": self.n_categories,
                "dim": self.dim,
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "lr": self.lr,
                "random_state": self.random_state,
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "CategoryEmbedder":
        network, meta = nn.load_model(path)
        if meta.get("model") != "category-embedder":
            raise ValueError(f"{path} is not a category-embedder model")
        est = cls(
            n_categories=meta["n_categories"],
            dim=meta["dim"],
            epochs=meta["epochs"],
            batch_size=meta["batch_size"],
            lr=meta["lr"],
            random_state=meta.get("random_state"),
        )
        est.network_ = network
        est._table_layer = network.layers[0]
        est._head = network.layers[1]
        est.training_loss_ = []
        return est


def write_embeddings_csv(path: str | Path, addresses, matrix: np.ndarray, extra: dict | None = None) -> None:
    """One row per contract: address, optional extra columns, then the vector.

    Floats are written with repr (shortest round-trip form, at most 17
    significant digits) so reading the file back reproduces the exact values.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    extra = extra or {}
    header = ["address", *extra.keys(), *[f"e{i}" for i in range(matrix.shape[1])]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, addr in enumerate(addresses):
            row = [addr, *[extra[k][i] for k in extra], *[repr(float(v)) for v in matrix[i]]]
            writer.writerow(row)


def read_embeddings_csv(path: str | Path) -> tuple[list[str], np.ndarray, dict[str, list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        first_vec = next(i for i, name in enumerate(header) if name == "e0")
        extra_names = header[1:first_vec]
        addresses: list[str] = []
        extra: dict[str, list[str]] = {name: [] for name in extra_names}
        rows: list[list[float]] = []
        for row in reader:
            addresses.append(row[0])
            for j, name in enumerate(extra_names):
                extra[name].append(row[1 + j])
            rows.append([float(v) for v in row[first_vec:]])
    return addresses, np.asarray(rows, dtype=np.float64), extra
