"""Linear-probe accuracy on frozen embeddings and continual-learning metrics."""

from dataclasses import dataclass

import numpy as np

from . import encoder
from ._rng import substream
from .errors import CCLError


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    lr: float = 0.5
    decay_epoch: int = 80
    decay_factor: float = 0.1
    weight_decay: float = 0.0
    split: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise CCLError("probe split must be in (0, 1)")
        if self.epochs < 1 or not self.lr > 0:
            raise CCLError("probe needs epochs >= 1 and lr > 0")


def train_test_split(n, fraction, rng):
    """Seeded permutation split; both sides sorted, train gets ``round(fraction * n)``."""
    perm = rng.permutation(n)
    cut = int(round(fraction * n))
    cut = min(max(cut, 1), n - 1) if n > 1 else n
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def fit_softmax_regression(features, labels, num_classes, config):
    """Full-batch gradient descent on multinomial logistic regression (W, b from zero)."""
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), labels] = 1.0
    W = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    for epoch in range(config.epochs):
        lr = config.lr * (config.decay_factor if epoch >= config.decay_epoch else 1.0)
        logits = X @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        W -= lr * (X.T @ g + config.weight_decay * W)
        b -= lr * g.sum(axis=0)
    return W, b


def probe_features(train_feats, train_labels, test_feats, test_labels, config):
    """Top-1 of a softmax-regression probe trained on the given features."""
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    classes = np.unique(train_labels)
    if not np.all(np.isin(test_labels, classes)):
        raise CCLError("probe class mismatch")
    y_train = np.searchsorted(classes, train_labels)
    y_test = np.searchsorted(classes, test_labels)
    W, b = fit_softmax_regression(train_feats, y_train, len(classes), config)
    pred = (np.asarray(test_feats) @ W + b).argmax(axis=1)
    return float(np.mean(pred == y_test))


def linear_probe(encoder_params, train, test, config=ProbeConfig()):
    """Embed with the frozen encoder (no augmentation) and probe.

    ``train`` and ``test`` are ``(samples, labels)`` pairs or LabeledDatasets.
    """
    (xtr, ytr), (xte, yte) = (_pair(train), _pair(test))
    return probe_features(encoder.embed(encoder_params, xtr), ytr,
                          encoder.embed(encoder_params, xte), yte, config)


def _pair(data):
    if hasattr(data, "samples"):
        return data.samples, data.labels
    return data


def task_splits(tasks, config):
    """Per-task seeded train/test partitions of each task's samples."""
    out = []
    for j, task in enumerate(tasks.tasks if hasattr(tasks, "tasks") else tasks):
        tr, te = train_test_split(len(task), config.split, substream(config.seed, "probe_split", j))
        out.append((task.subset(tr), task.subset(te)))
    return out


def accuracy_matrix(checkpoints, tasks, config=ProbeConfig()):
    """``a[i, j]`` = probe top-1 on task ``j`` using the encoder saved after task ``i``."""
    splits = task_splits(tasks, config)
    if len(checkpoints) != len(splits):
        raise CCLError("need one checkpoint per task")
    T = len(splits)
    a = np.zeros((T, T))
    for i, params in enumerate(checkpoints):
        for j, (tr, te) in enumerate(splits):
            a[i, j] = linear_probe(params, tr, te, config)
    return a


def forgetting(a):
    """Mean over old tasks of the drop from the best accuracy to the final one."""
    a = np.asarray(a, dtype=np.float64)
    T = a.shape[0]
    if T < 2:
        raise CCLError("undefined for single task")
    drops = a[:, :T - 1].max(axis=0) - a[T - 1, :T - 1]
    return float(drops.mean())


def forward_transfer(a, r):
    """Mean of ``a[i-1, i] - r[i]`` over tasks 2..T (0-based: 1..T-1)."""
    a = np.asarray(a, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    T = a.shape[0]
    if T < 2:
        raise CCLError("undefined")
    if r.shape != (T,):
        raise CCLError("need one random-init accuracy per task")
    return float(np.mean(a[np.arange(T - 1), np.arange(1, T)] - r[1:]))


def random_init_accuracies(widths, tasks, config=ProbeConfig(), seed=0):
    """Probe accuracy of a freshly initialised encoder on every task."""
    params = encoder.init_params(widths, seed)
    return np.array([linear_probe(params, tr, te, config) for tr, te in task_splits(tasks, config)])


def pooled_top1(encoder_params, dataset, config=ProbeConfig()):
    """Probe over every class at once with one seeded split of the whole dataset."""
    tr, te = train_test_split(len(dataset), config.split, substream(config.seed, "probe_pooled"))
    return linear_probe(encoder_params, dataset.subset(tr), dataset.subset(te), config)
