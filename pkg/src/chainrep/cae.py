"""Convolutional autoencoder anomaly detection over hourly windows.

The encoder is Conv1D(16, k3, s2, p1) -> ReLU -> Conv1D(8, k3, s2, p1) ->
ReLU -> Flatten -> Dense(bottleneck); the decoder mirrors it with nearest
neighbour upsampling. Training minimises per-window reconstruction MSE on
reputable data only. The multimodal variant projects the contract's code
embedding through a trainable dense layer, tiles it across the window's
timesteps and concatenates it channel-wise; the reconstruction target is the
fused tensor, so atypical code contributes to the anomaly signal alongside
atypical behaviour.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nn
from .ingest import Label

logger = logging.getLogger(__name__)

__all__ = [
    "ConvAutoencoder",
    "AnomalyThreshold",
    "AnomalyReport",
    "fit_threshold",
    "classify_contract",
    "pca_project",
]

VARIANTS = ("transaction_only", "multimodal")


def _is_illicit(label) -> bool:
    if isinstance(label, Label):
        return label is Label.ILLICIT
    return str(label).lower() == Label.ILLICIT.value


class ConvAutoencoder(BaseEstimator):
    """Reconstruction-error anomaly scorer for (N, W, F) window tensors.

    The window length must be divisible by 4 (two stride-2 convolutions are
    mirrored by two x2 upsamples). fit() refuses any window labelled illicit:
    the model learns what reputable behaviour looks like and nothing else.
    """

    def __init__(
        self,
        window: int = 24,
        n_features: int = 8,
        bottleneck: int = 8,
        epochs: int = 200,
        batch_size: int = 32,
        lr: float = 1e-3,
        multimodal: bool = False,
        embed_dim: int = 50,
        embed_width: int = 8,
        random_state: int | None = None,
    ):
        self.window = window
        self.n_features = n_features
        self.bottleneck = bottleneck
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.multimodal = multimodal
        self.embed_dim = embed_dim
        self.embed_width = embed_width
        self.random_state = random_state

    # -- construction ------------------------------------------------------

    @property
    def _channels(self) -> int:
        return self.n_features + (self.embed_width if self.multimodal else 0)

    def _build(self, rng: np.random.Generator) -> None:
        if self.window % 4 != 0:
            raise ValueError(
                f"window length must be divisible by 4, got {self.window} "
                "(two stride-2 encoder convolutions must be invertible by x2 upsampling)"
            )
        c = self._channels
        l2 = self.window // 4
        self.encoder_ = nn.Network(
            [
                nn.Conv1D(c, 16, 3, rng, stride=2, padding=1),
                nn.ReLU(),
                nn.Conv1D(16, 8, 3, rng, stride=2, padding=1),
                nn.ReLU(),
                nn.Flatten(),
                nn.Dense(8 * l2, self.bottleneck, rng),
            ]
        )
        self.decoder_ = nn.Network(
            [
                nn.Dense(self.bottleneck, 8 * l2, rng),
                nn.ReLU(),
                nn.Reshape((l2, 8)),
                nn.Upsample1D(2),
                nn.Conv1D(8, 16, 3, rng, stride=1, padding=1),
                nn.ReLU(),
                nn.Upsample1D(2),
                nn.Conv1D(16, c, 3, rng, stride=1, padding=1),
            ]
        )
        if self.multimodal:
            self.projection_ = nn.Dense(self.embed_dim, self.embed_width, rng)
        # sanity: the decoder must give back the encoder's input shape
        probe = np.zeros((1, self.window, c))
        recon = self.decoder_.forward(self.encoder_.forward(probe))
        if recon.shape != probe.shape:
            raise RuntimeError(f"decoder output {recon.shape} != encoder input {probe.shape}")

    def _modules(self):
        mods = [self.encoder_, self.decoder_]
        if self.multimodal:
            mods.append(self.projection_)
        return mods

    # -- data plumbing -------------------------------------------------------

    def _check_windows(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != self.window or X.shape[2] != self.n_features:
            raise ValueError(
                f"expected windows of shape (N, {self.window}, {self.n_features}), got {X.shape}"
            )
        return X

    def fuse(self, X: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
        """Project, tile and concatenate embeddings onto windows (multimodal)."""
        if not self.multimodal:
            raise ValueError("fuse() only applies to the multimodal variant")
        X = self._check_windows(X)
        E = np.asarray(embeddings, dtype=np.float64)
        if E.shape != (X.shape[0], self.embed_dim):
            raise ValueError(
                f"expected embeddings of shape ({X.shape[0]}, {self.embed_dim}), got {E.shape}"
            )
        projected = self.projection_.forward(E)  # (N, E')
        tiled = np.repeat(projected[:, None, :], self.window, axis=1)
        return np.concatenate([X, tiled], axis=2)

    def _forward_input(self, X: np.ndarray, embeddings: np.ndarray | None) -> np.ndarray:
        if self.multimodal:
            if embeddings is None:
                raise ValueError("multimodal variant needs embeddings")
            return self.fuse(X, embeddings)
        return self._check_windows(X)

    # -- training ------------------------------------------------------------

    def fit(self, X: np.ndarray, y=None, embeddings: np.ndarray | None = None):
        """Train on reputable windows. If labels are given, any window marked
        illicit is rejected outright."""
        X = self._check_windows(X)
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float64)
        if y is not None:
            labels = list(y)
            if len(labels) != X.shape[0]:
                raise ValueError("labels and windows disagree in length")
            bad = sum(1 for lab in labels if _is_illicit(lab))
            if bad:
                raise ValueError(
                    f"training set contains {bad} illicit-labelled windows; "
                    "the autoencoder must be trained on reputable data only"
                )
        rng = np.random.default_rng(self.random_state)
        self._build(rng)
        mse = nn.MSELoss()
        optimizer = nn.Adam(self._modules(), lr=self.lr)

        n = X.shape[0]
        self.training_loss_ = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                self._train_step(X[idx], None if embeddings is None else embeddings[idx], mse, optimizer)
            self.training_loss_.append(
                float(np.mean(self.reconstruction_errors(X, embeddings)))
            )
        self.final_loss_ = self.training_loss_[-1] if self.training_loss_ else None
        return self

    def _train_step(self, xb, eb, mse, optimizer) -> float:
        fused = self._forward_input(xb, eb)
        recon = self.decoder_.forward(self.encoder_.forward(fused))
        loss = mse.value(recon, fused)
        d_recon = mse.grad(recon, fused)
        d_fused_net = self.encoder_.backward(self.decoder_.backward(d_recon))
        if self.multimodal:
            # the target is the fused tensor itself, so the loss also moves
            # with the projection directly: d(target) = -d(recon) side
            d_fused = d_fused_net - d_recon
            d_tiled = d_fused[:, :, self.n_features :]
            self.projection_.backward(d_tiled.sum(axis=1))
        optimizer.step()
        return loss

    # -- scoring -------------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "encoder_"):
            raise NotFittedError("ConvAutoencoder must be fitted before use")

    def reconstruction_errors(
        self, X: np.ndarray, embeddings: np.ndarray | None = None
    ) -> np.ndarray:
        """Per-window mean squared reconstruction error."""
        self._check_fitted()
        fused = self._forward_input(np.asarray(X, dtype=np.float64), embeddings)
        recon = self.decoder_.forward(self.encoder_.forward(fused))
        diff = recon - fused
        return (diff * diff).mean(axis=(1, 2))

    def transform(self, X: np.ndarray, embeddings: np.ndarray | None = None) -> np.ndarray:
        """Bottleneck latent codes, one row per window."""
        self._check_fitted()
        fused = self._forward_input(np.asarray(X, dtype=np.float64), embeddings)
        return self.encoder_.forward(fused)

    def loss_model(self, X: np.ndarray, embeddings: np.ndarray | None = None):
        """A gradient-check adapter bound to a fixed batch."""
        self._check_fitted()
        return _CaeLossModel(self, np.asarray(X, dtype=np.float64), embeddings)

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        self._check_fitted()
        layers = list(self.encoder_.layers) + list(self.decoder_.layers)
        if self.multimodal:
            layers.append(self.projection_)
        container = nn.Network(layers)
        nn.save_model(
            container,
            path,
            meta={
                "model": "conv-autoencoder",
                "params": self.get_params(),
                "n_encoder_layers": len(self.encoder_.layers),
                "n_decoder_layers": len(self.decoder_.layers),
            },
        )

    @classmethod
    def load(cls, path) -> "ConvAutoencoder":
        container, meta = nn.load_model(path)
        if meta.get("model") != "conv-autoencoder":
            raise ValueError(f"{path} is not a conv-autoencoder model")
        est = cls(**meta["params"])
        n_enc = meta["n_encoder_layers"]
        n_dec = meta["n_decoder_layers"]
        est.encoder_ = nn.Network(container.layers[:n_enc])
        est.decoder_ = nn.Network(container.layers[n_enc : n_enc + n_dec])
        if est.multimodal:
            est.projection_ = container.layers[n_enc + n_dec]
        est.training_loss_ = []
        est.final_loss_ = None
        return est


class _CaeLossModel:
    """compute_grads / loss_only / param_grad_pairs over one fixed batch."""

    def __init__(self, model: ConvAutoencoder, X: np.ndarray, embeddings):
        self.model = model
        self.X = X
        self.embeddings = embeddings
        self.mse = nn.MSELoss()

    def loss_only(self) -> float:
        m = self.model
        fused = m._forward_input(self.X, self.embeddings)
        recon = m.decoder_.forward(m.encoder_.forward(fused))
        return self.mse.value(recon, fused)

    def compute_grads(self) -> float:
        m = self.model
        fused = m._forward_input(self.X, self.embeddings)
        recon = m.decoder_.forward(m.encoder_.forward(fused))
        value = self.mse.value(recon, fused)
        d_recon = self.mse.grad(recon, fused)
        d_fused_net = m.encoder_.backward(m.decoder_.backward(d_recon))
        if m.multimodal:
            d_fused = d_fused_net - d_recon
            d_tiled = d_fused[:, :, m.n_features :]
            m.projection_.backward(d_tiled.sum(axis=1))
        return value

    def param_grad_pairs(self):
        pairs = []
        for module in self.model._modules():
            pairs.extend(module.param_grad_pairs())
        return pairs


@dataclass(frozen=True)
class AnomalyThreshold:
    percentile: float
    cutoff: float
    n_train: int


@dataclass(frozen=True)
class AnomalyReport:
    address: str
    variant: str
    percentile: float
    n_windows: int
    n_anomalous: int
    anomaly_ratio: float
    verdict: str

    def as_dict(self) -> dict:
        return {
            "address": self.address,
            "variant": self.variant,
            "percentile": self.percentile,
            "n_windows": self.n_windows,
            "n_anomalous": self.n_anomalous,
            "anomaly_ratio": self.anomaly_ratio,
            "verdict": self.verdict,
        }


def fit_threshold(train_errors: np.ndarray, percentile: float, variant: str = "") -> AnomalyThreshold:
    """Cutoff at the given percentile of the training reconstruction errors.

    Linear-interpolation percentile over the sorted errors (rank =
    p/100 * (n-1)); percentile must lie in [75, 90].
    """
    errors = np.asarray(train_errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise ValueError("cannot fit a threshold on zero training errors")
    if not 75.0 <= percentile <= 90.0:
        raise ValueError(f"percentile must be within [75, 90], got {percentile}")
    cutoff = float(np.percentile(errors, percentile))
    return AnomalyThreshold(percentile=float(percentile), cutoff=cutoff, n_train=errors.size)


def classify_contract(
    address: str,
    window_errors: np.ndarray,
    threshold: AnomalyThreshold,
    ratio_cutoff: float = 0.30,
    variant: str = "",
) -> AnomalyReport:
    """A contract is illicit iff the share of its windows whose error strictly
    exceeds the cutoff strictly exceeds ratio_cutoff."""
    errors = np.asarray(window_errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise ValueError(f"{address}: no windows to classify")
    n_anom = int((errors > threshold.cutoff).sum())
    ratio = n_anom / errors.size
    verdict = Label.ILLICIT.value if ratio > ratio_cutoff else Label.REPUTABLE.value
    return AnomalyReport(
        address=address,
        variant=variant,
        percentile=threshold.percentile,
        n_windows=errors.size,
        n_anomalous=n_anom,
        anomaly_ratio=ratio,
        verdict=verdict,
    )


def pca_project(latents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 2-D principal-component projection of latent codes.

    Sign convention: each component's largest-magnitude coordinate is made
    positive. Returns (projected (N, 2), components (2, K)).
    """
    L = np.asarray(latents, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] < 2:
        raise ValueError("need at least two latent rows to project")
    centered = L - L.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    k = min(2, vt.shape[0])
    components = vt[:k].copy()
    if k < 2:
        components = np.vstack([components, np.zeros((2 - k, L.shape[1]))])
    for i in range(2):
        row = components[i]
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            components[i] = -row
    return centered @ components.T, components
