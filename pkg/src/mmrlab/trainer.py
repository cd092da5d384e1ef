"""Unified training loop: alternating classification/clustering passes, the
scheduled label corrector, the human-in-the-loop rounds, and run artifacts.

The per-epoch order is: classification pass; (every T epochs in mmr-hil:
detect -> query annotator -> reweight -> penalized pass); target
distribution; clustering pass; omega schedule; label correction.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import fuzzy, hil, metrics
from .attack import NoiseSpec, inject
from .data import Dataset, GeneratorSpec, generate, one_hot
from .hil import HilConfig, QueryItem
from .layers import Adam
from .model import MmrModel, ModelConfig, export_embeddings

METHODS = ("baseline-ce", "mmr", "mmr-hil")

QUERY_COLUMNS = ["round", "sample_id", "p_false", "direction", "issued_epoch",
                 "status", "label", "source"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    method: str = "mmr"
    epochs: int = 40
    seed: int = 0
    lr: float = 0.001
    kappa: float = 0.03            # label-correction schedule slope
    model: ModelConfig = field(default_factory=ModelConfig)
    hil: HilConfig = field(default_factory=HilConfig)
    patience: int = 10             # convergence-epoch hold length
    conv_band: float = 0.25        # accuracy points below the run maximum
    attack: dict | None = None     # echo of the attack on the training data
    export_embeddings: bool = False
    collapse_hil_pass: bool = False  # fold the penalized pass into the regular one

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.kappa <= 0:
            raise ValueError(f"correction coefficient must be positive, got {self.kappa}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        self.model.validate()
        self.hil.validate()

    def to_dict(self) -> dict:
        return {
            "method": self.method, "epochs": self.epochs, "seed": self.seed,
            "lr": self.lr, "kappa": self.kappa, "model": self.model.to_dict(),
            "hil": self.hil.__dict__.copy(), "patience": self.patience,
            "conv_band": self.conv_band, "attack": self.attack,
            "export_embeddings": self.export_embeddings,
            "collapse_hil_pass": self.collapse_hil_pass,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        cfg = RunConfig(
            method=d.get("method", "mmr"), epochs=d.get("epochs", 40),
            seed=d.get("seed", 0), lr=d.get("lr", 0.001),
            kappa=d.get("kappa", 0.03),
            model=ModelConfig.from_dict(d.get("model", {})),
            hil=HilConfig(**d.get("hil", {})),
            patience=d.get("patience", 10), conv_band=d.get("conv_band", 0.25),
            attack=d.get("attack"),
            export_embeddings=d.get("export_embeddings", False),
            collapse_hil_pass=d.get("collapse_hil_pass", False),
        )
        cfg.validate()
        return cfg


@dataclass
class RunResult:
    config: dict
    snapshots: list[dict]
    model: MmrModel
    train_final: Dataset          # training set with final labels and masks
    queries: list[QueryItem]
    convergence: dict
    epoch_seconds: list[float]    # wall-clock only; never serialized

    def run_json(self) -> dict:
        return {"config": self.config, "snapshots": self.snapshots,
                "convergence": self.convergence}


def omega(kappa: float, t: int) -> float:
    """Correction strength at epoch t: ramps linearly, saturates at 1."""
    if kappa <= 0:
        raise ValueError(f"correction coefficient must be positive, got {kappa}")
    return min(kappa * t, 1.0)


def correct_labels(labels_train: np.ndarray, y_c: np.ndarray, y_clu: np.ndarray,
                   w: float, frozen: np.ndarray | None = None) -> np.ndarray:
    """Convex mix of current labels with the averaged hard predictions.

    Expert-annotated (frozen) rows are pinned and skipped.
    """
    consensus = (one_hot(y_c) + one_hot(y_clu)) / 2.0
    out = (1.0 - w) * labels_train + w * consensus
    if frozen is not None and frozen.any():
        out[frozen] = labels_train[frozen]
    return out


def _epoch_rng(seed: int, epoch: int, salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, salt]))


def _check_finite(value: float, epoch: int, batch: int, phase: str):
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, "
                               f"batch {batch} ({phase} pass)")


def train_epoch_classification(model: MmrModel, opt: Adam, ds: Dataset,
                               eps_weights: np.ndarray, rng: np.random.Generator,
                               epoch: int, pure_ce: bool = False) -> list[float]:
    """One shuffled pass over the training set on the classification objective."""
    order = rng.permutation(ds.n)
    x = ds.features.astype(model.dtype)
    losses = []
    bs = model.config.batch_size
    for b, lo in enumerate(range(0, ds.n, bs)):
        idx = order[lo:lo + bs]
        opt.zero_grad()
        if pure_ce:
            loss = model.classification_loss(x[idx], ds.labels_train[idx])
        else:
            loss = model.penalized_classification_loss(
                x[idx], ds.labels_train[idx], eps_weights[idx])
        _check_finite(loss.item(), epoch, b, "classification")
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses


def train_epoch_clustering(model: MmrModel, opt: Adam, ds: Dataset,
                           p_t: np.ndarray, rng: np.random.Generator,
                           epoch: int) -> list[float]:
    """One shuffled pass minimizing reconstruction + KL to the frozen targets."""
    order = rng.permutation(ds.n)
    x = ds.features.astype(model.dtype)
    losses = []
    bs = model.config.batch_size
    for b, lo in enumerate(range(0, ds.n, bs)):
        idx = order[lo:lo + bs]
        opt.zero_grad()
        loss = model.clustering_module_loss(x[idx], p_t[idx])
        _check_finite(loss.item(), epoch, b, "clustering")
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses


class _Observer:
    """No-op hooks; the HTTP status board overrides these."""

    def on_start(self, work: Dataset, model: MmrModel):
        pass

    def on_phase(self, epoch: int, phase: str):
        pass

    def on_snapshot(self, snapshot: dict):
        pass


def run(config: RunConfig, train_ds: Dataset, test_ds: Dataset,
        annotator=None, observer: _Observer | None = None) -> RunResult:
    config.validate()
    if config.method == "mmr-hil" and annotator is None:
        raise ValueError("mmr-hil needs an annotator backend")
    observer = observer or _Observer()

    work = train_ds.copy()
    model = MmrModel(config.model, seed=config.seed)
    x_all = work.features.astype(model.dtype)
    x_test = test_ds.features.astype(model.dtype)
    n = work.n
    if config.method == "baseline-ce":
        opt_class = Adam(model.encoder.parameters() + model.classifier.parameters(),
                         lr=config.lr)
        opt_cluster = None
    else:
        opt_class = Adam(model.classification_parameters(), lr=config.lr)
        opt_cluster = Adam(model.clustering_parameters(), lr=config.lr)

    observer.on_start(work, model)
    eps_weights = np.ones(n)
    perm = (0, 1)
    queried_ever: set[int] = set()
    n_dq = 0
    total_queries = 0
    round_index = 0
    transcript: list[QueryItem] = []
    snapshots: list[dict] = []
    epoch_seconds: list[float] = []

    for t in range(config.epochs):
        tick = time.perf_counter()
        rng_class = _epoch_rng(config.seed, t, 0)
        rng_cluster = _epoch_rng(config.seed, t, 1)

        observer.on_phase(t, "classification")
        train_epoch_classification(model, opt_class, work, eps_weights,
                                   rng_class, t, pure_ce=config.method == "baseline-ce")

        if config.method != "baseline-ce" and t == 0:
            # embeddings are pure noise before any training, so the clustering
            # layer is initialized right after the first classification pass
            observer.on_phase(t, "cluster-init")
            state, _ = fuzzy.init_centers(model.embed(x_all), m=config.model.fuzzifier)
            model.cluster.initialize(state)

        if config.method == "mmr-hil" and t % config.hil.period == 0:
            observer.on_phase(t, "annotation")
            losses = hil.per_sample_losses(model, work, x=x_all)
            gmm = hil.fit_gmm(losses)
            pf = hil.p_false(gmm, losses)
            detected = hil.detect(pf, config.hil.tau)
            round_index += 1
            queries = hil.select_queries(
                detected, pf, config.hil.rho, n, round_index, t,
                annotated_history=queried_ever, dedupe=config.hil.dedupe)
            if queries:
                annotator.annotate(queries)
                for q in queries:
                    total_queries += 1
                    if q.sample_id in queried_ever:
                        n_dq += 1
                    queried_ever.add(q.sample_id)
                    if q.status == "labeled":
                        work.labels_train[q.sample_id] = 0.0
                        work.labels_train[q.sample_id, q.label] = 1.0
                        work.annotated_mask[q.sample_id] = True
                        eps_weights[q.sample_id] = config.hil.penalty
                transcript.extend(queries)
            if not config.collapse_hil_pass:
                observer.on_phase(t, "penalized")
                train_epoch_classification(model, opt_class, work, eps_weights,
                                           _epoch_rng(config.seed, t, 2), t)

        if config.method != "baseline-ce":
            observer.on_phase(t, "clustering")
            z_all = model.embed(x_all)
            # the embedding drifts (and its scale grows) much faster than the
            # gradient steps can move the centers, so the closed-form solver
            # re-tracks centers and the global mean on the fresh embedding,
            # warm-started from the gradient-trained centers; the epoch's
            # gradient pass below still trains centers jointly
            state, _ = fuzzy.init_centers(
                z_all, m=config.model.fuzzifier, max_iter=50, rel_tol=1e-7,
                initial_centers=model.cluster.centers.data if t > 0 else None)
            model.cluster.initialize(state)
            q_full = model.cluster_assignments_from_z(z_all)
            p_t = fuzzy.target_distribution(q_full)
            train_epoch_clustering(model, opt_cluster, work, p_t, rng_cluster, t)

        w = omega(config.kappa, t)
        if config.method != "baseline-ce":
            observer.on_phase(t, "correction")
            z_all = model.embed(x_all)
            y_c = model.predict_classes_from_z(z_all)
            hard_clu = np.argmax(model.cluster_assignments_from_z(z_all), axis=1)
            perm = fuzzy.align_clusters(hard_clu, y_c, perm)
            y_clu = fuzzy.apply_alignment(hard_clu, perm)
            work.labels_train = correct_labels(
                work.labels_train, y_c, y_clu, w, frozen=work.annotated_mask)

        snapshot = {
            "epoch": t,
            "accuracy": float(
                (model.predict_classes(x_test) == test_ds.labels_true).mean() * 100.0),
            "correction": metrics.correction_rate(work),
            "n_q": len(queried_ever) / n,
            "n_dq": n_dq,
            "n_dq_over_n_q": (n_dq / total_queries) if total_queries else 0.0,
            "total_queries": total_queries,
            "omega": w,
        }
        snapshots.append(snapshot)
        observer.on_snapshot(snapshot)
        epoch_seconds.append(time.perf_counter() - tick)

    trace = [s["accuracy"] for s in snapshots]
    conv_epoch, truncated = metrics.convergence_epoch(
        trace, band=config.conv_band, patience=config.patience)
    return RunResult(
        config=config.to_dict(),
        snapshots=snapshots,
        model=model,
        train_final=work,
        queries=transcript,
        convergence={"epoch": conv_epoch, "truncated": truncated,
                     "band": config.conv_band, "patience": config.patience},
        epoch_seconds=epoch_seconds,
    )


def save_run(result: RunResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(result.run_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "labels_final.csv"), "w") as f:
        f.write("index,p_stable,p_unstable,annotated\n")
        for i, (a, b) in enumerate(result.train_final.labels_train):
            f.write(f"{i},{float(a)!r},{float(b)!r},"
                    f"{int(result.train_final.annotated_mask[i])}\n")
    with open(os.path.join(out_dir, "queries.csv"), "w") as f:
        f.write(",".join(QUERY_COLUMNS) + "\n")
        for q in result.queries:
            row = q.to_row()
            f.write(",".join(str(row[c]) for c in QUERY_COLUMNS) + "\n")
    result.model.save(out_dir)
    if result.config.get("export_embeddings"):
        export_embeddings(result.model,
                          result.train_final.features.astype(np.float64), out_dir)


def load_transcript(path: str) -> list[dict]:
    with open(path) as f:
        header = f.readline().rstrip("\n").split(",")
        rows = []
        for line in f:
            if line.strip():
                rows.append(dict(zip(header, line.rstrip("\n").split(","))))
    return rows


def wall_clock_scaling_probe(n_values: list[int], config: RunConfig | None = None,
                             epochs: int = 3) -> list[dict]:
    """Median per-epoch wall time of short runs at each sample count."""
    results = []
    for n in n_values:
        cfg = config or RunConfig()
        cfg = RunConfig.from_dict(cfg.to_dict())
        cfg.epochs = epochs
        _, h, w = cfg.model.in_shape
        ds = generate(GeneratorSpec(seed=1234, n=n, height=h, width=w))
        ds = inject(ds, NoiseSpec("sym", 0.2, seed=5))
        test = generate(GeneratorSpec(seed=4321, n=max(n // 4, 8), height=h, width=w))
        result = run(cfg, ds, test)
        results.append({"n": n, "epoch_seconds": float(np.median(result.epoch_seconds))})
    return results
