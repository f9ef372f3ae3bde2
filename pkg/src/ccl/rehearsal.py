"""Exemplar selection for rehearsal.

After a task finishes, its samples are embedded, clustered with k-means, and
each cluster keeps the members whose embeddings move least under random
augmentation. A uniform random sampler is provided as the baseline.
"""

from dataclasses import dataclass, field

import numpy as np

from . import encoder
from ._rng import derive_seed
from .datastream import augment
from .errors import CCLError
from .numerics import sum_dim_variance


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations_used: int
    inertia_history: list


def _sq_dists(X, C):
    d2 = (X**2).sum(1)[:, None] - 2.0 * X @ C.T + (C**2).sum(1)[None, :]
    return np.maximum(d2, 0.0)


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = _sq_dists(X, X[centers[0]][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every remaining point coincides with a center; take unused ones in order
            unused = np.setdiff1d(np.arange(n), centers)
            idx = int(unused[0])
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(idx)
        closest = np.minimum(closest, _sq_dists(X, X[idx][None])[:, 0])
    return X[centers].copy()


def kmeans(features, k, seed=0, max_iter=100, tol=1e-6):
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is refilled with the point currently farthest from its
    centroid. Raises if inertia ever increases between iterations.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise CCLError("invalid features")
    n = X.shape[0]
    if k < 1:
        raise CCLError("k must be >= 1")
    if k > n:
        raise CCLError("k exceeds population")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, k, rng)
    history = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = _sq_dists(X, C)
        labels = d2.argmin(axis=1)
        cost = d2[np.arange(n), labels]
        history.append(float(cost.sum()))
        if len(history) > 1 and history[-1] > history[-2] * (1 + 1e-12) + 1e-12:
            raise CCLError("k-means inertia increased")
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            movable = counts[labels] > 1
            far = int(np.argmax(np.where(movable, cost, -1.0)))
            counts[labels[far]] -= 1
            labels[far] = j
            counts[j] = 1
            cost[far] = 0.0
        new_C = np.zeros_like(C)
        np.add.at(new_C, labels, X)
        new_C /= counts[:, None]
        shift = np.sqrt(((new_C - C) ** 2).sum(1)).max()
        C = new_C
        if shift < tol:
            break
    d2 = _sq_dists(X, C)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    return ClusterResult(labels, C, inertia, iterations, history)


def view_variance(encoder_params, sample, augmenter, l=6, seed=0):
    """Feature variance of one sample across ``l`` seeded augmented views."""
    if l < 2:
        raise CCLError("need at least two views")
    rng = np.random.default_rng(seed)
    views = augment(np.repeat(np.asarray(sample, dtype=np.float64)[None], l, axis=0), augmenter, rng)
    return sum_dim_variance(encoder.embed(encoder_params, views))


def sample_seed(run_seed, task_id, index):
    """Per-sample view seed; depends only on (run, task, sample index)."""
    return derive_seed(run_seed, "views", task_id, index)


@dataclass
class Selection:
    indices: np.ndarray  # sorted, unique
    clusters: np.ndarray  # cluster id per selected index
    scores: np.ndarray  # view variance per selected index
    cluster_result: ClusterResult = None


def rank_exemplars(samples, encoder_params, k, n_per_cluster, l, seed, augmenter,
                   task_id=0, kmeans_max_iter=100, kmeans_tol=1e-6):
    """Cluster the task's embeddings and keep the ``n`` steadiest members per cluster."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise CCLError("empty dataset")
    if n_per_cluster < 1:
        raise CCLError("n_per_cluster must be >= 1")
    if l < 2:
        raise CCLError("need at least two views")
    feats = encoder.embed(encoder_params, samples)
    clusters = kmeans(feats, k, seed=derive_seed(seed, "kmeans", task_id),
                      max_iter=kmeans_max_iter, tol=kmeans_tol)
    scores = np.array([
        view_variance(encoder_params, x, augmenter, l, sample_seed(seed, task_id, i))
        for i, x in enumerate(samples)
    ])
    keep = []
    for c in range(k):
        members = np.flatnonzero(clusters.assignments == c)
        # lexsort: last key is primary -> score ascending, ties by lower index
        order = members[np.lexsort((members, scores[members]))]
        keep.extend(order[:n_per_cluster].tolist())
    idx = np.array(sorted(keep), dtype=np.int64)
    return Selection(idx, clusters.assignments[idx], scores[idx], clusters)


def select_exemplars(samples, encoder_params, k, n_per_cluster, l, seed, augmenter, task_id=0, **kw):
    return rank_exemplars(samples, encoder_params, k, n_per_cluster, l, seed, augmenter,
                          task_id=task_id, **kw).indices


def select_random(n_samples, budget, seed):
    """Uniformly chosen indices without replacement, sorted."""
    if budget > n_samples:
        raise CCLError("budget exceeds population")
    if budget < 0:
        raise CCLError("budget must be >= 0")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_samples, size=budget, replace=False))


@dataclass
class ExemplarStore:
    """Append-only rehearsal memory with per-entry provenance."""

    input_dim: int
    samples: np.ndarray = None
    task_ids: np.ndarray = None
    cluster_ids: np.ndarray = None
    scores: np.ndarray = None
    budgets: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples is None:
            self.samples = np.empty((0, self.input_dim))
            self.task_ids = np.empty(0, dtype=np.int64)
            self.cluster_ids = np.empty(0, dtype=np.int64)
            self.scores = np.empty(0)

    def __len__(self):
        return self.samples.shape[0]

    def add(self, task_id, samples, cluster_ids=None, scores=None, budget=None):
        samples = np.asarray(samples, dtype=np.float64).reshape(-1, self.input_dim)
        n = samples.shape[0]
        if task_id in self.budgets:
            raise CCLError(f"task {task_id} already stored")
        if budget is not None and n > budget:
            raise CCLError("selection exceeds task budget")
        cluster_ids = np.full(n, -1) if cluster_ids is None else np.asarray(cluster_ids)
        scores = np.full(n, np.nan) if scores is None else np.asarray(scores, dtype=np.float64)
        self.samples = np.concatenate([self.samples, samples])
        self.task_ids = np.concatenate([self.task_ids, np.full(n, task_id, dtype=np.int64)])
        self.cluster_ids = np.concatenate([self.cluster_ids, cluster_ids.astype(np.int64)])
        self.scores = np.concatenate([self.scores, scores])
        self.budgets[task_id] = n if budget is None else int(budget)
        return self
