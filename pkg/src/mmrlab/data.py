"""Seeded synthetic transient-trajectory datasets and their on-disk format.

Stable samples are multi-channel damped oscillations, unstable samples have
a growing envelope; labels are therefore recoverable from the noise-free
waveforms, which is what makes desk-scale experiments meaningful.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

CLASS_NAMES = ("stable", "unstable")
STABLE, UNSTABLE = 0, 1
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Corrupt or inconsistent dataset directory."""


@dataclass
class GeneratorSpec:
    seed: int = 0
    n: int = 3000
    height: int = 16          # monitored channels
    width: int = 32           # time steps
    balance: float = 0.5      # fraction of stable samples
    damping_range: tuple = (0.5, 2.5)   # stable decay rate over the window
    growth_range: tuple = (0.5, 2.5)    # unstable growth rate
    freq_range: tuple = (2.0, 6.0)      # oscillation cycles per window
    amplitude_range: tuple = (0.5, 1.5)
    noise_sigma: float = 0.5

    def validate(self):
        if self.n <= 0:
            raise ValueError(f"sample count must be positive, got {self.n}")
        if self.height <= 0 or self.width <= 0:
            raise ValueError("height and width must be positive")
        if not 0.0 <= self.balance <= 1.0:
            raise ValueError(f"class balance must lie in [0,1], got {self.balance}")
        for name in ("damping_range", "growth_range", "freq_range", "amplitude_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be nonnegative")


@dataclass
class Dataset:
    features: np.ndarray        # (N,1,H,W) float32
    labels_true: np.ndarray     # (N,) int64, 0=stable 1=unstable
    labels_train: np.ndarray    # (N,2) float64 soft labels
    flipped_mask: np.ndarray    # (N,) bool, touched by label injection
    annotated_mask: np.ndarray  # (N,) bool, expert-labeled
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def height(self) -> int:
        return self.features.shape[2]

    @property
    def width(self) -> int:
        return self.features.shape[3]

    def validate(self):
        n = self.n
        if self.features.ndim != 4 or self.features.shape[1] != 1:
            raise ValueError(f"features must be (N,1,H,W), got {self.features.shape}")
        for name in ("labels_true", "flipped_mask", "annotated_mask"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} length {getattr(self, name).shape} != N={n}")
        if self.labels_train.shape != (n, 2):
            raise ValueError(f"labels_train must be (N,2), got {self.labels_train.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        rows = self.labels_train.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-9) or np.any(self.labels_train < 0) or np.any(self.labels_train > 1):
            raise ValueError("labels_train rows must be probabilities summing to 1")

    def copy(self) -> "Dataset":
        return Dataset(
            features=self.features.copy(),
            labels_true=self.labels_true.copy(),
            labels_train=self.labels_train.copy(),
            flipped_mask=self.flipped_mask.copy(),
            annotated_mask=self.annotated_mask.copy(),
            meta=json.loads(json.dumps(self.meta)),
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels_true, other.labels_true)
            and np.array_equal(self.labels_train, other.labels_train)
            and np.array_equal(self.flipped_mask, other.flipped_mask)
            and np.array_equal(self.annotated_mask, other.annotated_mask)
        )


def one_hot(labels: np.ndarray) -> np.ndarray:
    out = np.zeros((labels.shape[0], 2), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def generate(spec: GeneratorSpec) -> Dataset:
    """Seeded draw of N trajectories; stable decays, unstable diverges."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, h, w = spec.n, spec.height, spec.width

    labels = (rng.random(n) >= spec.balance).astype(np.int64)
    rate_lo = np.where(labels == STABLE, spec.damping_range[0], spec.growth_range[0])
    rate_hi = np.where(labels == STABLE, spec.damping_range[1], spec.growth_range[1])
    rates = rng.uniform(rate_lo, rate_hi)                     # (N,)
    amps = rng.uniform(*spec.amplitude_range, size=(n, h))
    freqs = rng.uniform(*spec.freq_range, size=(n, h))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n, h))
    noise = rng.normal(0.0, 1.0, size=(n, h, w)) if spec.noise_sigma > 0 else 0.0

    t = np.linspace(0.0, 1.0, w)
    sign = np.where(labels == STABLE, -1.0, 1.0)[:, None, None]
    envelope = np.exp(sign * rates[:, None, None] * t[None, None, :])
    wave = amps[:, :, None] * envelope * np.sin(
        2.0 * np.pi * freqs[:, :, None] * t[None, None, :] + phases[:, :, None]
    )
    x = wave + spec.noise_sigma * noise

    # z-normalize each channel of each sample
    mean = x.mean(axis=2, keepdims=True)
    std = np.maximum(x.std(axis=2, keepdims=True), 1e-8)
    x = (x - mean) / std

    ds = Dataset(
        features=x.astype(np.float32)[:, None, :, :],
        labels_true=labels,
        labels_train=one_hot(labels),
        flipped_mask=np.zeros(n, dtype=bool),
        annotated_mask=np.zeros(n, dtype=bool),
        meta={
            "format_version": FORMAT_VERSION,
            "class_names": list(CLASS_NAMES),
            "seed": spec.seed,
            "generator": asdict(spec),
        },
    )
    ds.validate()
    return ds


def split(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded, disjoint and exhaustive train/test split.

    ratio is the train fraction; the train size is round(ratio*N) with
    per-class counts allocated by largest remainder.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0,1), got {ratio}")
    n = ds.n
    target_train = int(round(ratio * n))
    if target_train == 0 or target_train == n:
        raise ValueError(f"degenerate split sizes ({target_train}/{n - target_train}) for N={n}")

    rng = np.random.default_rng(seed)
    class_indices = [np.flatnonzero(ds.labels_true == c) for c in (STABLE, UNSTABLE)]
    shares = [idx.size * ratio for idx in class_indices]
    base = [int(np.floor(s)) for s in shares]
    leftover = target_train - sum(base)
    order = sorted(range(2), key=lambda c: shares[c] - base[c], reverse=True)
    counts = list(base)
    for c in order[:leftover]:
        counts[c] += 1

    train_idx, test_idx = [], []
    for c in (STABLE, UNSTABLE):
        perm = rng.permutation(class_indices[c])
        train_idx.append(perm[:counts[c]])
        test_idx.append(perm[counts[c]:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))

    def subset(idx, role):
        meta = json.loads(json.dumps(ds.meta))
        meta["split"] = {"role": role, "ratio": ratio, "seed": seed, "parent_n": n}
        return Dataset(
            features=ds.features[idx].copy(),
            labels_true=ds.labels_true[idx].copy(),
            labels_train=ds.labels_train[idx].copy(),
            flipped_mask=ds.flipped_mask[idx].copy(),
            annotated_mask=ds.annotated_mask[idx].copy(),
            meta=meta,
        )

    return subset(train_idx, "train"), subset(test_idx, "test")


def save(ds: Dataset, dirpath: str) -> None:
    ds.validate()
    os.makedirs(dirpath, exist_ok=True)
    meta = dict(ds.meta)
    meta.update({
        "format_version": FORMAT_VERSION,
        "n": ds.n,
        "height": ds.height,
        "width": ds.width,
        "class_names": list(CLASS_NAMES),
    })
    with open(os.path.join(dirpath, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(dirpath, "features.bin"), "wb") as f:
        f.write(ds.features.astype("<f4").tobytes(order="C"))
    with open(os.path.join(dirpath, "labels_true.csv"), "w") as f:
        f.write("index,label\n")
        for i, y in enumerate(ds.labels_true):
            f.write(f"{i},{int(y)}\n")
    with open(os.path.join(dirpath, "labels_train.csv"), "w") as f:
        f.write("index,p_stable,p_unstable\n")
        for i, (a, b) in enumerate(ds.labels_train):
            f.write(f"{i},{float(a)!r},{float(b)!r}\n")
    with open(os.path.join(dirpath, "masks.csv"), "w") as f:
        f.write("index,flipped,annotated\n")
        for i in range(ds.n):
            f.write(f"{i},{int(ds.flipped_mask[i])},{int(ds.annotated_mask[i])}\n")


def _read_csv_rows(path: str, expected_header: str, n: int):
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != expected_header:
            raise DatasetFormatError(f"{os.path.basename(path)}: bad header {header!r}")
        rows = [line.rstrip("\n").split(",") for line in f if line.strip()]
    if len(rows) != n:
        raise DatasetFormatError(
            f"{os.path.basename(path)}: expected {n} rows, got {len(rows)}"
        )
    for pos, row in enumerate(rows):
        if int(row[0]) != pos:
            raise DatasetFormatError(
                f"{os.path.basename(path)}: row {pos} carries index {row[0]}"
            )
    return rows


def load(dirpath: str) -> Dataset:
    meta_path = os.path.join(dirpath, "meta.json")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"meta.json unreadable: {e}") from e
    try:
        n, h, w = int(meta["n"]), int(meta["height"]), int(meta["width"])
    except KeyError as e:
        raise DatasetFormatError(f"meta.json missing field {e}") from e

    expected_bytes = n * h * w * 4
    raw = open(os.path.join(dirpath, "features.bin"), "rb").read()
    if len(raw) != expected_bytes:
        raise DatasetFormatError(
            f"features.bin length mismatch at byte {min(len(raw), expected_bytes)}: "
            f"expected {expected_bytes} bytes (N*H*W*4), got {len(raw)}"
        )
    features = np.frombuffer(raw, dtype="<f4").reshape(n, 1, h, w).copy()

    true_rows = _read_csv_rows(os.path.join(dirpath, "labels_true.csv"), "index,label", n)
    labels_true = np.array([int(r[1]) for r in true_rows], dtype=np.int64)
    if np.any((labels_true < 0) | (labels_true > 1)):
        raise DatasetFormatError("labels_true.csv: labels must be 0 or 1")

    train_rows = _read_csv_rows(
        os.path.join(dirpath, "labels_train.csv"), "index,p_stable,p_unstable", n)
    labels_train = np.array([[float(r[1]), float(r[2])] for r in train_rows], dtype=np.float64)

    mask_rows = _read_csv_rows(os.path.join(dirpath, "masks.csv"), "index,flipped,annotated", n)
    flipped = np.array([bool(int(r[1])) for r in mask_rows])
    annotated = np.array([bool(int(r[2])) for r in mask_rows])

    ds = Dataset(
        features=features,
        labels_true=labels_true,
        labels_train=labels_train,
        flipped_mask=flipped,
        annotated_mask=annotated,
        meta=meta,
    )
    try:
        ds.validate()
    except ValueError as e:
        raise DatasetFormatError(str(e)) from e
    return ds
