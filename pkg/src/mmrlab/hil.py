"""Human-in-the-loop plugin: loss-based false-sample detection with a
two-component Gaussian mixture, bi-directional query selection, and
annotator backends (oracle, scripted replay, interactive inbox)."""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .data import CLASS_NAMES, Dataset
from .model import MmrModel, PROB_FLOOR

VAR_FLOOR = 1e-6
DIRECTIONS = ("descending", "ascending")
FALLBACKS = ("skip", "oracle")


@dataclass
class HilConfig:
    tau: float = 0.8          # false-sample detection threshold
    rho: float = 0.0055       # annotation rate, per direction
    period: int = 3           # re-label every `period` epochs (T)
    penalty: float = 3.0      # loss weight on annotated samples
    dedupe: bool = False      # skip previously annotated samples when selecting
    timeout_seconds: float = 0.0   # 0 waits forever (interactive backend only)
    fallback: str = "skip"

    def validate(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0,1), got {self.tau}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0,1), got {self.rho}")
        if self.period < 1:
            raise ValueError(f"annotation period must be >= 1, got {self.period}")
        if self.penalty < 1.0:
            raise ValueError(f"penalty must be >= 1, got {self.penalty}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}")


@dataclass
class QueryItem:
    sample_id: int
    p_false: float
    direction: str            # "descending" (likely false) or "ascending" (ambiguous)
    round_index: int          # 1-based annotation round
    issued_epoch: int = 0
    status: str = "pending"   # pending -> labeled | expired
    label: int | None = None  # expert class index
    source: str | None = None

    def to_row(self) -> dict:
        return {
            "round": self.round_index,
            "sample_id": self.sample_id,
            "p_false": self.p_false,
            "direction": self.direction,
            "issued_epoch": self.issued_epoch,
            "status": self.status,
            "label": "" if self.label is None else CLASS_NAMES[self.label],
            "source": self.source or "",
        }


@dataclass
class Gmm1d:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    single_mode: bool = False
    loglik_trace: list = field(default_factory=list)


def per_sample_losses(model: MmrModel, ds: Dataset, x: np.ndarray | None = None) -> np.ndarray:
    """Per-sample halved soft-target cross-entropy (no gradient).

    The 1/2 factor scales all losses uniformly, so mixture ranking and
    p_false ordering are unaffected by it.
    """
    probs = model.classifier_probs(ds.features if x is None else x)
    logp = np.log(np.clip(probs.astype(np.float64), PROB_FLOOR, 1.0))
    return -0.5 * (ds.labels_train * logp).sum(axis=1)


def _log_gauss(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    return -0.5 * (np.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def fit_gmm(losses: np.ndarray, max_iter: int = 100, tol: float = 1e-6) -> Gmm1d:
    """Two-component 1-D EM, deterministically seeded at the loss quartiles."""
    x = np.asarray(losses, dtype=np.float64)
    if x.size < 4:
        raise ValueError(f"need at least 4 losses to fit a mixture, got {x.size}")
    spread = float(x.std())
    if spread < 1e-9:
        m = float(x.mean())
        return Gmm1d(weights=np.array([0.5, 0.5]), means=np.array([m, m]),
                     variances=np.array([VAR_FLOOR, VAR_FLOOR]), single_mode=True)

    means = np.percentile(x, [25.0, 75.0]).astype(np.float64)
    variances = np.full(2, max(float(x.var()), VAR_FLOOR))
    weights = np.array([0.5, 0.5])
    trace: list[float] = []

    for _ in range(max_iter):
        logp = np.stack([_log_gauss(x, means[k], variances[k]) + np.log(weights[k])
                         for k in range(2)], axis=1)
        top = logp.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
        loglik = float(lse.sum())
        resp = np.exp(logp - lse[:, None])

        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / x.size
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk
        variances = np.maximum(variances, VAR_FLOOR)

        if trace and loglik - trace[-1] < tol:
            trace.append(loglik)
            break
        trace.append(loglik)

    return Gmm1d(weights=weights, means=means, variances=variances,
                 single_mode=False, loglik_trace=trace)


def p_false(gmm: Gmm1d, losses: np.ndarray | float) -> np.ndarray:
    """Posterior responsibility of the higher-mean (false-sample) component."""
    x = np.atleast_1d(np.asarray(losses, dtype=np.float64))
    if gmm.single_mode:
        return np.zeros(x.shape)
    hi = int(np.argmax(gmm.means))
    logp = np.stack([_log_gauss(x, gmm.means[k], gmm.variances[k]) + np.log(gmm.weights[k])
                     for k in range(2)], axis=1)
    top = logp.max(axis=1, keepdims=True)
    resp = np.exp(logp - top)
    return resp[:, hi] / resp.sum(axis=1)


def detect(p_false_values: np.ndarray, tau: float) -> np.ndarray:
    """Indices with p_false strictly above tau, sorted by p_false descending
    (index order breaks ties, for determinism)."""
    idx = np.flatnonzero(p_false_values > tau)
    order = np.argsort(-p_false_values[idx], kind="stable")
    return idx[order]


def select_queries(detected: np.ndarray, p_false_values: np.ndarray, rho: float,
                   n_total: int, round_index: int, issued_epoch: int,
                   annotated_history: set[int] | None = None,
                   dedupe: bool = False) -> list[QueryItem]:
    """Bi-directional pick: ceil(rho*N) from each end of the detected set,
    deduplicated within the round."""
    per_direction = math.ceil(rho * n_total)
    pool = [int(i) for i in detected]
    if dedupe and annotated_history:
        pool = [i for i in pool if i not in annotated_history]

    chosen: dict[int, QueryItem] = {}
    for i in pool[:per_direction]:
        chosen[i] = QueryItem(sample_id=i, p_false=float(p_false_values[i]),
                              direction="descending", round_index=round_index,
                              issued_epoch=issued_epoch)
    for i in reversed(pool[max(len(pool) - per_direction, 0):]):
        if i not in chosen:
            chosen[i] = QueryItem(sample_id=i, p_false=float(p_false_values[i]),
                                  direction="ascending", round_index=round_index,
                                  issued_epoch=issued_epoch)
    return list(chosen.values())


class OracleAnnotator:
    """Answers every query with the ground-truth label."""

    name = "oracle"

    def __init__(self, labels_true: np.ndarray):
        self.labels_true = np.asarray(labels_true)

    def annotate(self, queries: list[QueryItem]) -> list[QueryItem]:
        for q in queries:
            q.label = int(self.labels_true[q.sample_id])
            q.status = "labeled"
            q.source = "oracle"
        return queries


class ScriptedAnnotator:
    """Replays a recorded transcript; every query must appear in it."""

    name = "scripted"

    def __init__(self, transcript_rows: list[dict]):
        self._answers: dict[tuple[int, int], str] = {}
        for row in transcript_rows:
            if row.get("status") == "labeled" and row.get("label"):
                key = (int(row["round"]), int(row["sample_id"]))
                self._answers[key] = row["label"]

    def annotate(self, queries: list[QueryItem]) -> list[QueryItem]:
        for q in queries:
            key = (q.round_index, q.sample_id)
            if key not in self._answers:
                raise KeyError(
                    f"transcript has no answer for sample {q.sample_id} in round {q.round_index}"
                )
            q.label = CLASS_NAMES.index(self._answers[key])
            q.status = "labeled"
            q.source = "scripted"
        return queries


class AnnotationInbox:
    """Thread-safe queue between the training loop and HTTP submissions.

    The trainer publishes one round at a time and consumes results only at
    the round boundary; each item transitions pending -> labeled exactly once.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._items: dict[int, QueryItem] = {}
        self.round_index = 0

    def publish(self, queries: list[QueryItem]) -> None:
        with self._lock:
            self._items = {q.sample_id: q for q in queries}
            self.round_index = queries[0].round_index if queries else self.round_index

    def pending(self) -> list[QueryItem]:
        with self._lock:
            return [q for q in self._items.values() if q.status == "pending"]

    def all_items(self) -> list[QueryItem]:
        with self._lock:
            return list(self._items.values())

    def get(self, sample_id: int) -> QueryItem | None:
        with self._lock:
            return self._items.get(sample_id)

    def submit(self, sample_id: int, label_name: str) -> str:
        """Returns 'ok', 'conflict' (already resolved) or 'not-found'."""
        if label_name not in CLASS_NAMES:
            raise ValueError(f"label must be one of {CLASS_NAMES}, got {label_name!r}")
        with self._lock:
            item = self._items.get(sample_id)
            if item is None:
                return "not-found"
            if item.status != "pending":
                return "conflict"
            item.label = CLASS_NAMES.index(label_name)
            item.status = "labeled"
            item.source = "human"
            return "ok"

    def unresolved_count(self) -> int:
        with self._lock:
            return sum(1 for q in self._items.values() if q.status == "pending")


class InteractiveAnnotator:
    """Blocks on the inbox until the round resolves or the timeout fires."""

    name = "interactive"

    def __init__(self, inbox: AnnotationInbox, labels_true: np.ndarray,
                 timeout_seconds: float = 0.0, fallback: str = "skip",
                 poll_interval: float = 0.05):
        if fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}")
        self.inbox = inbox
        self.labels_true = np.asarray(labels_true)
        self.timeout_seconds = timeout_seconds
        self.fallback = fallback
        self.poll_interval = poll_interval

    def annotate(self, queries: list[QueryItem]) -> list[QueryItem]:
        self.inbox.publish(queries)
        deadline = (time.monotonic() + self.timeout_seconds
                    if self.timeout_seconds > 0 else None)
        while self.inbox.unresolved_count() > 0:
            if deadline is not None and time.monotonic() >= deadline:
                break
            time.sleep(self.poll_interval)
        for q in self.inbox.all_items():
            if q.status == "pending":
                if self.fallback == "oracle":
                    q.label = int(self.labels_true[q.sample_id])
                    q.status = "labeled"
                else:
                    q.status = "expired"
                q.source = "timeout-fallback"
        return self.inbox.all_items()
