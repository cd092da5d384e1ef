"""Fuzzy embedding clustering: separation objective, closed-form membership
and center updates, alternating initialization, and the target distribution.

The membership formula doubles as the clustering layer's forward pass; the
same Tensor-graph implementation serves both the solver (values only) and
training (gradients into embeddings and centers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad

DELTA_FLOOR = 1e-8       # clamp for nonpositive membership bases
EMPTY_CLUSTER_EPS = 1e-12


@dataclass
class ClusterState:
    centers: np.ndarray    # (2, Ze)
    mu_bar: np.ndarray     # (Ze,)
    fuzzifier: float
    converged: bool = True
    iterations: int = 0


def membership_graph(z: Tensor, centers: Tensor, mu_bar: np.ndarray, m: float,
                     floor: float = DELTA_FLOOR) -> Tensor:
    """Soft assignments q (N x 2) as a differentiable graph.

    Row weights are (max(||z - mu_j||^2 - ||mu_j - mu_bar||^2, floor))
    raised to -1/(m-1), then row-normalized.
    """
    diff = z.reshape(z.shape[0], 1, z.shape[1]) - centers.reshape(1, 2, centers.shape[1])
    d2 = (diff ** 2).sum(axis=2)                              # (N, 2)
    offset = ((centers - Tensor(mu_bar)) ** 2).sum(axis=1)    # (2,)
    base = (d2 - offset.reshape(1, 2)).maximum(floor)
    w = base ** (-1.0 / (m - 1.0))
    return w / w.sum(axis=1, keepdims=True)


def update_assignments(z: np.ndarray, state: ClusterState) -> np.ndarray:
    """Closed-form membership update; plain-array view of membership_graph."""
    with no_grad():
        q = membership_graph(Tensor(z), Tensor(state.centers), state.mu_bar,
                             state.fuzzifier)
    return q.data


def update_centers(z: np.ndarray, q: np.ndarray, m: float) -> np.ndarray:
    """Weighted-mean center update; an empty cluster is re-seeded at the
    sample farthest from the other center."""
    qm = q ** m
    denom = qm.sum(axis=0)
    centers = np.empty((2, z.shape[1]))
    for j in range(2):
        if denom[j] < EMPTY_CLUSTER_EPS:
            continue
        centers[j] = (qm[:, j:j + 1] * z).sum(axis=0) / denom[j]
    for j in range(2):
        if denom[j] < EMPTY_CLUSTER_EPS:
            other = centers[1 - j]
            far = np.argmax(((z - other) ** 2).sum(axis=1))
            centers[j] = z[far]
    return centers


def separation_objective(z: np.ndarray, state: ClusterState,
                         q: np.ndarray) -> tuple[float, float, float]:
    """(S_intra, S_inter, L) where L = S_intra - S_inter, in scalar trace form."""
    n = z.shape[0]
    qm = q ** state.fuzzifier
    d_bar = ((z - state.mu_bar) ** 2).sum(axis=1)            # (N,)
    s_inter = float((qm * d_bar[:, None]).sum() / n)
    diff = z[:, None, :] - state.centers[None, :, :]
    d_cent = (diff ** 2).sum(axis=2)                          # (N, 2)
    s_intra = float((qm * d_cent).sum() / n)
    return s_intra, s_inter, s_intra - s_inter


def init_centers(z: np.ndarray, m: float = 2.0, max_iter: int = 100,
                 tol: float = 1e-6, rel_tol: float = 0.0,
                 initial_centers: np.ndarray | None = None) -> tuple[ClusterState, np.ndarray]:
    """Alternate membership/center updates until the separation objective
    settles. Seeds at the two farthest points unless warm-start centers are
    given; returns the state and the final memberships."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"need at least two embeddings, got shape {z.shape}")
    mu_bar = z.mean(axis=0)
    if initial_centers is None:
        first = int(np.argmax(((z - mu_bar) ** 2).sum(axis=1)))
        second = int(np.argmax(((z - z[first]) ** 2).sum(axis=1)))
        centers = np.vstack([z[first], z[second]])
    else:
        centers = np.asarray(initial_centers, dtype=np.float64).copy()
    state = ClusterState(centers=centers, mu_bar=mu_bar, fuzzifier=m)

    prev = np.inf
    q = update_assignments(z, state)
    for it in range(1, max_iter + 1):
        state.centers = update_centers(z, q, m)
        q = update_assignments(z, state)
        _, _, objective = separation_objective(z, state, q)
        state.iterations = it
        if abs(objective - prev) < tol + rel_tol * abs(objective):
            state.converged = True
            break
        prev = objective
    else:
        state.converged = False

    # coincident centers (e.g. all-duplicate data): take the re-seed path once
    if ((state.centers[0] - state.centers[1]) ** 2).sum() <= DELTA_FLOOR ** 2:
        far = int(np.argmax(((z - state.centers[0]) ** 2).sum(axis=1)))
        state.centers[1] = z[far]
        q = update_assignments(z, state)
        if ((state.centers[0] - state.centers[1]) ** 2).sum() <= DELTA_FLOOR ** 2:
            state.converged = False
    return state, q


def target_distribution(q: np.ndarray) -> np.ndarray:
    """Sharpened targets: square memberships, discount by cluster frequency,
    renormalize rows."""
    freq = np.maximum(q.sum(axis=0), 1e-12)
    weight = q ** 2 / freq[None, :]
    return weight / weight.sum(axis=1, keepdims=True)


def align_clusters(y_clu: np.ndarray, y_ref: np.ndarray,
                   prev: tuple[int, int] = (0, 1)) -> tuple[int, int]:
    """Pick the cluster-index permutation that best agrees with reference
    hard labels; ties keep the previous permutation."""
    direct = float((y_clu == y_ref).mean())
    swapped = float(((1 - y_clu) == y_ref).mean())
    if direct > swapped:
        return (0, 1)
    if swapped > direct:
        return (1, 0)
    return prev


def apply_alignment(values: np.ndarray, perm: tuple[int, int]) -> np.ndarray:
    """Reorder cluster-indexed columns (or relabel hard assignments)."""
    if values.ndim == 1:
        return values if perm == (0, 1) else 1 - values
    return values[:, list(perm)]
