"""The four-part network (encoder, decoder, classifier, clustering layer)
and every training loss used by the alternating optimization."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import fuzzy
from .autodiff import Tensor, no_grad
from .layers import (
    Activation, Conv2d, ConvTranspose2d, Dense, Flatten, Reshape, Sequential,
    Softmax,
)

PROB_FLOOR = 1e-12  # clamp before every log; keeps losses finite under attack


@dataclass
class ModelConfig:
    arch: str = "conv"                 # "conv" reference stack, "dense" fast variant
    in_shape: tuple = (1, 16, 32)
    conv_channels: tuple = (8, 16, 32)
    conv_kernels: tuple = (5, 5, 4)
    conv_paddings: tuple = (2, 2, 1)
    dense_hidden: int = 128
    embed_dim: int = 64                # Z_e
    classifier_hidden: int = 16
    alpha1: float = 1.0
    alpha2: float = 1.0
    fuzzifier: float = 2.0
    batch_size: int = 64
    penalty: float = 3.0               # weight on expert-annotated samples
    dtype: str = "float32"             # training precision; tests pin float64

    def validate(self):
        if self.arch not in ("conv", "dense"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.embed_dim <= 0:
            raise ValueError("embedding dimension must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("balance coefficients must be nonnegative")
        if self.fuzzifier <= 1.0:
            raise ValueError("fuzzifier must exceed 1")
        if self.penalty < 1.0:
            raise ValueError("annotation penalty must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        c, h, w = self.in_shape
        if self.arch == "conv" and (h % 8 or w % 8):
            raise ValueError("conv stack halves each spatial dim three times; "
                             f"H and W must be divisible by 8, got {h}x{w}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
        cfg.validate()
        return cfg


class ClusterLayer:
    """Parametric layer whose forward pass is the fuzzy membership formula
    with learnable centers."""

    def __init__(self, embed_dim: int, fuzzifier: float):
        self.centers = Tensor(np.zeros((2, embed_dim)), requires_grad=True)
        self.mu_bar = np.zeros(embed_dim)
        self.fuzzifier = fuzzifier
        self.initialized = False

    def parameters(self):
        return [self.centers]

    def initialize(self, state: fuzzy.ClusterState):
        self.centers.data = np.asarray(state.centers, dtype=self.centers.data.dtype)
        self.mu_bar = np.asarray(state.mu_bar, dtype=self.centers.data.dtype)
        self.initialized = True

    def forward(self, z: Tensor) -> Tensor:
        if not self.initialized:
            raise RuntimeError("clustering layer used before initialization")
        return fuzzy.membership_graph(z, self.centers, self.mu_bar, self.fuzzifier)

    __call__ = forward


class MmrModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c, h, w = config.in_shape
        ze = config.embed_dim

        if config.arch == "conv":
            ch = config.conv_channels
            ks = config.conv_kernels
            ps = config.conv_paddings
            bottom = (ch[2], h // 8, w // 8)
            flat = int(np.prod(bottom))
            self.encoder = Sequential(
                Conv2d(c, ch[0], ks[0], stride=2, padding=ps[0], rng=rng),
                Activation("relu"),
                Conv2d(ch[0], ch[1], ks[1], stride=2, padding=ps[1], rng=rng),
                Activation("relu"),
                Conv2d(ch[1], ch[2], ks[2], stride=2, padding=ps[2], rng=rng),
                Activation("relu"),
                Flatten(),
                Dense(flat, ze, rng=rng),
            )
            self.decoder = Sequential(
                Dense(ze, flat, rng=rng),
                Activation("relu"),
                Reshape(bottom),
                ConvTranspose2d(ch[2], ch[1], ks[2], stride=2, padding=ps[2], rng=rng),
                Activation("relu"),
                ConvTranspose2d(ch[1], ch[0], ks[1], stride=2, padding=ps[1],
                                output_padding=1, rng=rng),
                Activation("relu"),
                ConvTranspose2d(ch[0], c, ks[0], stride=2, padding=ps[0],
                                output_padding=1, rng=rng),
            )
        else:
            flat = c * h * w
            hidden = config.dense_hidden
            self.encoder = Sequential(
                Flatten(),
                Dense(flat, hidden, rng=rng),
                Activation("tanh"),
                Dense(hidden, ze, rng=rng),
            )
            self.decoder = Sequential(
                Dense(ze, hidden, rng=rng),
                Activation("tanh"),
                Dense(hidden, flat, rng=rng),
                Reshape((c, h, w)),
            )
        self.classifier = Sequential(
            Dense(ze, config.classifier_hidden, rng=rng),
            Activation("relu"),
            Dense(config.classifier_hidden, 2, rng=rng),
            Softmax(),
        )
        self.cluster = ClusterLayer(ze, config.fuzzifier)
        self.dtype = np.dtype(config.dtype)
        for p in self.all_parameters():
            p.data = p.data.astype(self.dtype)

    # -- parameter groups ---------------------------------------------------------

    def classification_parameters(self):
        return (self.encoder.parameters() + self.decoder.parameters()
                + self.classifier.parameters())

    def clustering_parameters(self):
        return (self.encoder.parameters() + self.decoder.parameters()
                + self.cluster.parameters())

    def all_parameters(self):
        return (self.encoder.parameters() + self.decoder.parameters()
                + self.classifier.parameters() + self.cluster.parameters())

    # -- inference ----------------------------------------------------------------

    def _batched(self, x: np.ndarray, fn, width: int = 512) -> np.ndarray:
        x = np.asarray(x).astype(self.dtype, copy=False)
        outs = []
        with no_grad():
            for lo in range(0, x.shape[0], width):
                outs.append(fn(Tensor(x[lo:lo + width])).data)
        return np.concatenate(outs, axis=0)

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Embeddings (N x Z_e), no gradient tracking."""
        return self._batched(x, self.encoder)

    def classifier_probs(self, x: np.ndarray) -> np.ndarray:
        return self._batched(x, lambda t: self.classifier(self.encoder(t)))

    def predict_classes(self, x: np.ndarray) -> np.ndarray:
        """Hard labels; ties break toward unstable (the costly error)."""
        p = self.classifier_probs(x)
        return (p[:, 1] >= p[:, 0]).astype(np.int64)

    def cluster_assignments(self, x: np.ndarray) -> np.ndarray:
        return self._batched(x, lambda t: self.cluster(self.encoder(t)))

    # head-only evaluations over precomputed embeddings (saves encoder passes)

    def classifier_probs_from_z(self, z: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.classifier(Tensor(z.astype(self.dtype, copy=False))).data

    def predict_classes_from_z(self, z: np.ndarray) -> np.ndarray:
        p = self.classifier_probs_from_z(z)
        return (p[:, 1] >= p[:, 0]).astype(np.int64)

    def cluster_assignments_from_z(self, z: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.cluster(Tensor(z.astype(self.dtype, copy=False))).data

    # -- losses (differentiable) ----------------------------------------------------

    @staticmethod
    def _reconstruction_from(x: Tensor, xhat: Tensor) -> Tensor:
        n = x.shape[0]
        return ((x - xhat) ** 2).reshape(n, -1).sum(axis=1).mean()

    @staticmethod
    def _ce_rows(probs: Tensor, labels: Tensor) -> Tensor:
        """Per-sample soft-target cross-entropy with clamped log, shape (N,)."""
        return -(labels * probs.clip(PROB_FLOOR, 1.0).log()).sum(axis=1)

    def _as_input(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x).astype(self.dtype, copy=False))

    def reconstruction_loss(self, x: np.ndarray | Tensor) -> Tensor:
        xt = self._as_input(x)
        return self._reconstruction_from(xt, self.decoder(self.encoder(xt)))

    def classification_loss(self, x: np.ndarray | Tensor, labels: np.ndarray) -> Tensor:
        xt = self._as_input(x)
        probs = self.classifier(self.encoder(xt))
        return self._ce_rows(probs, Tensor(np.asarray(labels, dtype=self.dtype))).mean()

    def classification_module_loss(self, x: np.ndarray, labels: np.ndarray) -> Tensor:
        xt = self._as_input(x)
        z = self.encoder(xt)
        loss = self._reconstruction_from(xt, self.decoder(z))
        if self.config.alpha1 != 0.0:
            ce = self._ce_rows(self.classifier(z),
                               Tensor(np.asarray(labels, dtype=self.dtype))).mean()
            loss = loss + self.config.alpha1 * ce
        return loss

    def penalized_classification_loss(self, x: np.ndarray, labels: np.ndarray,
                                      weights: np.ndarray) -> Tensor:
        xt = self._as_input(x)
        z = self.encoder(xt)
        loss = self._reconstruction_from(xt, self.decoder(z))
        if self.config.alpha1 != 0.0:
            ce = self._ce_rows(self.classifier(z),
                               Tensor(np.asarray(labels, dtype=self.dtype)))
            weighted = (ce * Tensor(np.asarray(weights, dtype=self.dtype))).sum()
            loss = loss + (self.config.alpha1 / x.shape[0]) * weighted
        return loss

    @staticmethod
    def kl_clustering_loss(q: Tensor | np.ndarray, p_t: np.ndarray) -> Tensor:
        qt = q if isinstance(q, Tensor) else Tensor(q)
        pt = np.maximum(np.asarray(p_t, dtype=qt.data.dtype), PROB_FLOOR)
        ratio_log = qt.clip(PROB_FLOOR, 1.0).log() - Tensor(pt).log()
        return (qt * ratio_log).sum(axis=1).mean()

    def clustering_module_loss(self, x: np.ndarray, p_t: np.ndarray) -> Tensor:
        xt = self._as_input(x)
        z = self.encoder(xt)
        loss = self._reconstruction_from(xt, self.decoder(z))
        if self.config.alpha2 != 0.0:
            loss = loss + self.config.alpha2 * self.kl_clustering_loss(self.cluster(z), p_t)
        return loss

    # -- persistence -----------------------------------------------------------------

    def save(self, dirpath: str) -> None:
        os.makedirs(dirpath, exist_ok=True)
        arrays = {f"p{i}": p.data for i, p in enumerate(self.all_parameters())}
        arrays["mu_bar"] = self.cluster.mu_bar
        np.savez(os.path.join(dirpath, "model.npz"), **arrays)
        with open(os.path.join(dirpath, "model_meta.json"), "w") as f:
            json.dump({"config": self.config.to_dict(),
                       "cluster_initialized": self.cluster.initialized},
                      f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load(dirpath: str, seed: int = 0) -> "MmrModel":
        with open(os.path.join(dirpath, "model_meta.json")) as f:
            meta = json.load(f)
        config = ModelConfig.from_dict(meta["config"])
        model = MmrModel(config, seed=seed)
        blob = np.load(os.path.join(dirpath, "model.npz"))
        for i, p in enumerate(model.all_parameters()):
            stored = blob[f"p{i}"]
            if stored.shape != p.data.shape:
                raise ValueError(f"saved parameter {i} has shape {stored.shape}, "
                                 f"expected {p.data.shape}")
            p.data = stored.astype(model.dtype)
        model.cluster.mu_bar = blob["mu_bar"].astype(model.dtype)
        model.cluster.initialized = bool(meta["cluster_initialized"])
        return model


def export_embeddings(model: MmrModel, x: np.ndarray, dirpath: str) -> None:
    """Raw embedding dump for external plotting tools."""
    z = model.embed(x)
    os.makedirs(dirpath, exist_ok=True)
    with open(os.path.join(dirpath, "embeddings.bin"), "wb") as f:
        f.write(z.astype("<f4").tobytes(order="C"))
    with open(os.path.join(dirpath, "embeddings_meta.json"), "w") as f:
        json.dump({"n": int(z.shape[0]), "embed_dim": int(z.shape[1]),
                   "dtype": "float32-le"}, f, indent=2, sort_keys=True)
        f.write("\n")
