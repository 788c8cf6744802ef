"""Task grouping: symmetric cluster matrix, spectral clustering, group models.

The affinity matrix is doubled into a 2T x 2T block form so that each task
appears once as a clustering target (rows 0..T-1) and once as a directional
source (rows T..2T-1); clustering the doubled matrix lets a task join extra
groups as an auxiliary source while keeping exactly one home group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb

import numpy as np

from .affinity import AffinityMatrix
from .errors import (
    CoverageError,
    DegenerateInputError,
    InvalidInputError,
    TrainingError,
)
from .learners import LearnerSpec, evaluate, train_subset

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6
DEGREE_EPS = 1e-12


@dataclass(frozen=True)
class ClusterMatrix:
    """Rescaled affinity blocks ready for spectral clustering.

    a1 is the symmetrized (rescaled) matrix, full the 2T x 2T block form
    [[a1, theta], [theta^T, 0]]. ``normalization`` records the affine
    rescale (offset, scale) applied to theta beforehand.
    """

    a1: np.ndarray
    full: np.ndarray
    normalization: dict
    num_tasks: int


@dataclass
class TaskGrouping:
    """b (possibly overlapping) task groups from one clustering run."""

    groups: list
    assignments: np.ndarray
    budget: int
    objective: float | None = None
    per_task_scores: list | None = None


def minmax_rescale(matrix: np.ndarray):
    """Affine rescale of all entries to [0, 1]; errors on a constant matrix."""
    lo, hi = float(matrix.min()), float(matrix.max())
    if hi == lo:
        raise DegenerateInputError("matrix is constant; no contrast to cluster on")
    return (matrix - lo) / (hi - lo), {"offset": lo, "scale": hi - lo}


def build_cluster_matrix(aff: AffinityMatrix) -> ClusterMatrix:
    """Assemble the doubled symmetric matrix from a performance-oriented theta."""
    if aff.orientation != "performance":
        raise InvalidInputError(
            "cluster matrix needs performance orientation; flip loss scores first"
        )
    scaled, norm = minmax_rescale(aff.theta)
    a1 = (scaled + scaled.T) / 2.0
    t = aff.num_tasks
    full = np.block([
        [a1, scaled],
        [scaled.T, np.zeros((t, t))],
    ])
    return ClusterMatrix(a1=a1, full=full, normalization=norm, num_tasks=t)


def _kmeans_pp_init(x, k, rng):
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = rng.choice(n, p=probs)
        else:
            idx = rng.integers(n)
        centroids[c] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[c]) ** 2).sum(axis=1))
    return centroids


def _kmeans(x, k, rng, restarts=KMEANS_RESTARTS, max_iter=KMEANS_MAX_ITER,
            tol=KMEANS_TOL):
    """Lloyd iterations with k-means++ seeding and deterministic tie rules.

    np.argmin breaks distance ties toward the lowest centroid index; empty
    clusters are reseeded at the point farthest from its assigned centroid.
    The lowest-inertia restart wins (first restart on ties).
    """
    n = x.shape[0]
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centroids = _kmeans_pp_init(x, k, rng)
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(max_iter):
            d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            labels = np.argmin(d2, axis=1)
            for c in range(k):
                if not np.any(labels == c):
                    far = int(np.argmax(d2[np.arange(n), labels]))
                    centroids[c] = x[far]
                    labels[far] = c
                    d2[:, c] = ((x - centroids[c]) ** 2).sum(axis=1)
            new_centroids = centroids.copy()
            for c in range(k):
                new_centroids[c] = x[labels == c].mean(axis=0)
            shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
            centroids = new_centroids
            if shift < tol:
                break
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), labels].sum())
        if inertia < best_inertia:
            best_inertia, best_labels = inertia, labels
    return best_labels


def spectral_cluster(matrix, k: int, seed: int) -> np.ndarray:
    """Normalized-cut spectral clustering of a symmetric nonnegative matrix.

    Accepts a ClusterMatrix (its ``full`` block is used) or a raw square
    ndarray. Takes the eigenvectors of the k smallest eigenvalues of
    I - D^{-1/2} A D^{-1/2}, row-normalizes them to unit length (all-zero
    rows stay zero), and k-means clusters the rows.
    """
    a = matrix.full if isinstance(matrix, ClusterMatrix) else np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError("spectral clustering needs a square matrix")
    n = a.shape[0]
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must lie in [1, {n}], got {k}")
    if a.min() < -1e-12:
        raise InvalidInputError("matrix entries must be nonnegative")
    a = np.maximum(a, 0.0)
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, DEGREE_EPS))
    m = inv_sqrt[:, None] * a * inv_sqrt[None, :]
    lap = np.eye(n) - (m + m.T) / 2.0
    _, vecs = np.linalg.eigh(lap)
    embed = vecs[:, :k]
    norms = np.linalg.norm(embed, axis=1)
    nz = norms > 0
    embed[nz] = embed[nz] / norms[nz, None]
    return _kmeans(embed, k, np.random.default_rng(seed))


def derive_groups(labels, num_tasks: int, budget: int) -> TaskGrouping:
    """Merge target and source copies sharing a cluster into task groups.

    Group g holds every task whose target copy (row i) or source copy
    (row T+i) was labeled g. Clusters with no members are dropped; a task
    whose target cluster was dropped falls back to its source copy's
    cluster, else to the largest group.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != 2 * num_tasks:
        raise InvalidInputError(
            f"expected {2 * num_tasks} copy labels, got {labels.shape[0]}"
        )
    clusters = sorted(set(labels.tolist()))
    if len(clusters) > budget:
        raise InvalidInputError(
            f"clustering produced {len(clusters)} groups, over budget {budget}"
        )
    members = {c: set() for c in clusters}
    for i in range(num_tasks):
        members[labels[i]].add(i)
        members[labels[num_tasks + i]].add(i)
    kept = [c for c in clusters if members[c]]
    kept_set = set(kept)
    for i in range(num_tasks):
        home = labels[i]
        if home in kept_set:
            continue
        source = labels[num_tasks + i]
        if source in kept_set:
            members[source].add(i)
        else:
            largest = max(kept, key=lambda c: len(members[c]))
            members[largest].add(i)
    groups = [sorted(members[c]) for c in kept]
    return TaskGrouping(groups=groups, assignments=labels, budget=budget)


def train_groups(g, tasks, grouping: TaskGrouping, spec: LearnerSpec, seed: int,
                 features: np.ndarray | None = None):
    """Train one multitask model per group, seeded by base seed XOR index."""
    models = []
    for gi, group in enumerate(grouping.groups):
        try:
            models.append(train_subset(g, tasks, group, spec, seed ^ gi,
                                        features=features))
        except TrainingError as exc:
            raise TrainingError(str(exc), group_index=gi) from exc
    return models


def evaluate_grouping(models, tasks, metric: str):
    """Best test score per task over deployed models, and their sum.

    The linear kind shares its weight vector, so every model scores every
    task; the mlp kind only scores tasks for which it has a head. A task
    covered by no model raises CoverageError.
    """
    if not models:
        raise InvalidInputError("at least one model is required")
    per_task = []
    for i in range(tasks.num_tasks):
        candidates = [
            m for m in models
            if m.kind == "closed-form-linear" or i in m.subset
        ]
        if not candidates:
            raise CoverageError(f"task {i} is covered by no deployed model",
                                uncovered=[i])
        per_task.append(max(evaluate(m, tasks, i, "test", metric) for m in candidates))
    return per_task, float(sum(per_task))


def adjusted_rand_index(labels_a, labels_b) -> float:
    """ARI between two labelings of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise InvalidInputError("labelings must have equal length")
    n = a.shape[0]
    cats_a, cats_b = np.unique(a), np.unique(b)
    table = np.zeros((cats_a.size, cats_b.size), dtype=np.int64)
    for ia, ca in enumerate(cats_a):
        for ib, cb in enumerate(cats_b):
            table[ia, ib] = int(np.sum((a == ca) & (b == cb)))
    sum_comb = sum(comb(int(nij), 2) for nij in table.ravel())
    sum_a = sum(comb(int(x), 2) for x in table.sum(axis=1))
    sum_b = sum(comb(int(x), 2) for x in table.sum(axis=0))
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_comb - expected) / (max_index - expected)


def save_grouping(grouping: TaskGrouping, path) -> None:
    payload = {
        "groups": [list(map(int, grp)) for grp in grouping.groups],
        "assignments": grouping.assignments.tolist(),
        "budget": grouping.budget,
        "objective": grouping.objective,
        "per_task_scores": grouping.per_task_scores,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_grouping(path) -> TaskGrouping:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return TaskGrouping(
        groups=[list(map(int, grp)) for grp in payload["groups"]],
        assignments=np.asarray(payload["assignments"], dtype=np.int64),
        budget=payload["budget"],
        objective=payload.get("objective"),
        per_task_scores=payload.get("per_task_scores"),
    )
