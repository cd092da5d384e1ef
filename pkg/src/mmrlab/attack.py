"""False-label injection: noise transition matrices and seeded label flips.

Symmetric attacks flip both classes at an equal ratio; asymmetric attacks
only flip unstable labels to stable (misreading unstable as stable is the
dangerous direction, so that is what an attacker fakes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, STABLE, UNSTABLE, one_hot

KINDS = ("sym", "asym")


class InjectionError(RuntimeError):
    """Attack applied to a dataset that is not a clean one-hot dataset."""


@dataclass
class NoiseSpec:
    kind: str           # "sym" or "asym"
    ratio: float        # injection ratio v in [0,1]
    seed: int = 0
    exact: bool = False  # flip exactly round(v * class count) per class

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"attack kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"injection ratio must lie in [0,1], got {self.ratio}")


def make_matrix(spec: NoiseSpec) -> np.ndarray:
    """Row-stochastic 2x2 transition matrix G[i,j] = p(label j | true i)."""
    spec.validate()
    v = spec.ratio
    if spec.kind == "sym":
        return np.array([[1.0 - v, v], [v, 1.0 - v]])
    return np.array([[1.0, 0.0], [v, 1.0 - v]])


def inject(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Resample each training label through its transition-matrix row."""
    spec.validate()
    if ds.flipped_mask.any() or "attack" in ds.meta:
        raise InjectionError("dataset already carries injected labels")
    hard = np.argmax(ds.labels_train, axis=1)
    if not np.array_equal(hard, ds.labels_true) or not np.all(
        np.isin(ds.labels_train, (0.0, 1.0))
    ):
        raise InjectionError("injection requires clean one-hot training labels")

    g = make_matrix(spec)
    rng = np.random.default_rng(spec.seed)
    labels = ds.labels_true
    new = labels.copy()
    if spec.exact:
        for c in (STABLE, UNSTABLE):
            flip_prob = 1.0 - g[c, c]
            idx = np.flatnonzero(labels == c)
            k = int(round(flip_prob * idx.size))
            chosen = rng.choice(idx, size=k, replace=False) if k > 0 else []
            new[chosen] = 1 - c
    else:
        flip_prob = 1.0 - g[labels, labels]
        flips = rng.random(labels.size) < flip_prob
        new[flips] = 1 - labels[flips]

    out = ds.copy()
    out.labels_train = one_hot(new)
    out.flipped_mask = new != labels
    out.meta["attack"] = {"kind": spec.kind, "ratio": spec.ratio,
                          "seed": spec.seed, "exact": spec.exact}
    return out
