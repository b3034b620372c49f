"""Hourly transactional behaviour features.

A contract's merged transaction stream is bucketed into calendar hours
(gap hours emit explicit zero rows), filtered for gross outliers with IQR
fences, standardised, and cut into fixed-width sliding windows for the
autoencoder.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .ingest import TxRecord

logger = logging.getLogger(__name__)

__all__ = [
    "FEATURE_NAMES",
    "HOUR",
    "ContractWindows",
    "aggregate_hourly",
    "remove_outlier_windows",
    "Standardizer",
    "windowize",
]

HOUR = 3600

# One row per hour, in this order.
FEATURE_NAMES: tuple[str, ...] = (
    "tx_count",
    "internal_tx_count",
    "unique_senders",
    "unique_receivers",
    "total_value_wei",
    "mean_gas_used",
    "mean_gas_price",
    "failed_tx_count",
)


@dataclass
class ContractWindows:
    address: str
    windows: np.ndarray  # (n_windows, W, F)
    starts: np.ndarray  # window start offsets in hours, relative to hour 0


def aggregate_hourly(transactions: list[TxRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Bucket a merged transaction stream into hourly feature rows.

    Returns (hour_starts, features): hour_starts are epoch seconds aligned to
    hour boundaries, contiguous from the first to the last active hour, and
    features is the (H, 8) float64 matrix in FEATURE_NAMES order. Hours with
    no activity are explicit zero rows. tx_count counts the whole merged
    stream; mean_gas_price averages over normal transactions only (gas price
    is not meaningful for internal calls), mean_gas_used over everything.
    """
    if not transactions:
        return np.zeros(0, dtype=np.int64), np.zeros((0, len(FEATURE_NAMES)))

    first_hour = transactions[0].timestamp // HOUR
    last_hour = max(t.timestamp for t in transactions) // HOUR
    n_hours = last_hour - first_hour + 1
    features = np.zeros((n_hours, len(FEATURE_NAMES)), dtype=np.float64)
    senders: list[set[str]] = [set() for _ in range(n_hours)]
    receivers: list[set[str]] = [set() for _ in range(n_hours)]
    gas_used_sums = np.zeros(n_hours)
    gas_price_sums = np.zeros(n_hours)
    normal_counts = np.zeros(n_hours)

    for tx in transactions:
        h = tx.timestamp // HOUR - first_hour
        features[h, 0] += 1
        if tx.is_internal:
            features[h, 1] += 1
        else:
            normal_counts[h] += 1
            gas_price_sums[h] += tx.gas_price
        if tx.from_addr:
            senders[h].add(tx.from_addr)
        if tx.to_addr:
            receivers[h].add(tx.to_addr)
        features[h, 4] += tx.value
        gas_used_sums[h] += tx.gas_used
        if tx.is_error:
            features[h, 7] += 1

    for h in range(n_hours):
        features[h, 2] = len(senders[h])
        features[h, 3] = len(receivers[h])
        if features[h, 0] > 0:
            features[h, 5] = gas_used_sums[h] / features[h, 0]
        if normal_counts[h] > 0:
            features[h, 6] = gas_price_sums[h] / normal_counts[h]

    hour_starts = (np.arange(first_hour, last_hour + 1, dtype=np.int64)) * HOUR
    return hour_starts, features


def remove_outlier_windows(
    features: np.ndarray, k: float = 3.0
) -> tuple[np.ndarray, np.ndarray]:
    """Drop rows falling outside per-feature IQR fences.

    Fences are [Q1 - k*IQR, Q3 + k*IQR] computed over the given population
    with linear-interpolation quartiles; a row is dropped if any feature
    breaches its fence. Fewer than 4 rows: pass through unchanged with a
    warning. Returns (kept_features, kept_mask).
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 4:
        logger.warning("outlier pass skipped: only %d windows (need >= 4)", n)
        return features, np.ones(n, dtype=bool)
    q1, q3 = np.percentile(features, [25, 75], axis=0)
    iqr = q3 - q1
    low = q1 - k * iqr
    high = q3 + k * iqr
    mask = np.all((features >= low) & (features <= high), axis=1)
    return features[mask], mask


class Standardizer(BaseEstimator, TransformerMixin):
    """Per-feature (x - mean) / std with population (ddof=0) std.

    Zero-variance features transform to exactly 0. Fitted state can round
    trip through JSON for reuse at scoring time.
    """

    def fit(self, X: np.ndarray, y=None, feature_names: tuple[str, ...] | None = None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError(f"expected a non-empty 2-D matrix, got shape {X.shape}")
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)  # ddof=0
        self.feature_names_ = tuple(feature_names) if feature_names else None
        return self

    def _check_fitted(self):
        if not hasattr(self, "mean_"):
            raise NotFittedError("Standardizer must be fitted before use")

    def transform(self, X: np.ndarray) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean_.shape[0]:
            raise ValueError(
                f"feature count mismatch: fitted {self.mean_.shape[0]}, got {X.shape[-1]}"
            )
        out = X - self.mean_
        safe = np.where(self.scale_ > 0, self.scale_, 1.0)
        out = out / safe
        return np.where(self.scale_ > 0, out, 0.0)

    def to_json(self, path: str | Path) -> None:
        self._check_fitted()
        payload = {
            "means": [float(v) for v in self.mean_],
            "stds": [float(v) for v in self.scale_],
            "feature_names": list(self.feature_names_) if self.feature_names_ else None,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "Standardizer":
        payload = json.loads(Path(path).read_text())
        st = cls()
        st.mean_ = np.asarray(payload["means"], dtype=np.float64)
        st.scale_ = np.asarray(payload["stds"], dtype=np.float64)
        names = payload.get("feature_names")
        st.feature_names_ = tuple(names) if names else None
        return st


def windowize(
    features: np.ndarray, window: int = 24, stride: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Cut an (H, F) matrix into (n, window, F) sliding windows.

    H >= window gives floor((H - window) / stride) + 1 windows starting at
    multiples of the stride. H < window gives exactly one window, zero padded
    at the front so the observed rows sit at the end; its start offset is
    H - window (negative or zero). Returns (windows, starts).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"expected (H, F), got shape {features.shape}")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    h, f = features.shape
    if h < window:
        padded = np.zeros((window, f), dtype=np.float64)
        if h:
            padded[window - h :] = features
        return padded[None, :, :], np.array([h - window], dtype=np.int64)
    n = (h - window) // stride + 1
    out = np.empty((n, window, f), dtype=np.float64)
    starts = np.empty(n, dtype=np.int64)
    for i in range(n):
        s = i * stride
        out[i] = features[s : s + window]
        starts[i] = s
    return out, starts
