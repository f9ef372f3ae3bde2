"""Synthetic and CSV datasets, vector augmentations, class-incremental splits."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CCLError


@dataclass(frozen=True)
class LabeledDataset:
    samples: np.ndarray  # (N, input_dim)
    labels: np.ndarray  # (N,) int
    num_classes: int

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise CCLError("empty dataset")
        if self.labels.shape != (self.samples.shape[0],):
            raise CCLError("labels do not match samples")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise CCLError("label out of range")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def input_dim(self):
        return self.samples.shape[1]

    def subset(self, index):
        return LabeledDataset(self.samples[index], self.labels[index], self.num_classes)


@dataclass(frozen=True)
class TaskStream:
    tasks: list
    class_order: np.ndarray
    class_groups: list

    def __len__(self):
        return len(self.tasks)


@dataclass(frozen=True)
class AugmentSpec:
    noise_sigma: float = 0.1
    drop_prob: float = 0.1
    scale_jitter: float = 0.1

    def __post_init__(self):
        vals = (self.noise_sigma, self.drop_prob, self.scale_jitter)
        if not all(np.isfinite(v) for v in vals):
            raise CCLError("augmentation parameters must be finite")
        if self.noise_sigma < 0 or self.scale_jitter < 0:
            raise CCLError("noise_sigma and scale_jitter must be >= 0")
        if not 0 <= self.drop_prob < 1:
            raise CCLError("drop_prob must be in [0, 1)")


IDENTITY_AUGMENT = AugmentSpec(0.0, 0.0, 0.0)


def generate_synthetic(num_classes, per_class, input_dim, class_spread, within_spread, seed):
    """Gaussian blobs whose means sit on a sphere of radius ``class_spread``.

    Samples are grouped by class (class 0 first).
    """
    if min(num_classes, per_class, input_dim) < 1:
        raise CCLError("counts must be >= 1")
    if not (class_spread > 0 and within_spread > 0):
        raise CCLError("spreads must be positive")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, input_dim))
    means *= class_spread / np.linalg.norm(means, axis=1, keepdims=True)
    noise = rng.standard_normal((num_classes, per_class, input_dim)) * within_spread
    samples = (means[:, None, :] + noise).reshape(-1, input_dim)
    labels = np.repeat(np.arange(num_classes), per_class)
    return LabeledDataset(samples, labels, num_classes)


def split_tasks(dataset, t_steps, seed):
    """Shuffle class ids once, then cut them into ``t_steps`` contiguous groups."""
    C = dataset.num_classes
    if t_steps < 1:
        raise CCLError("t_steps must be >= 1")
    if t_steps > C:
        raise CCLError("too many steps")
    order = np.random.default_rng(seed).permutation(C)
    base, extra = divmod(C, t_steps)
    groups, pos = [], 0
    for t in range(t_steps):
        size = base + (1 if t < extra else 0)
        groups.append(np.sort(order[pos:pos + size]))
        pos += size
    tasks = [dataset.subset(np.flatnonzero(np.isin(dataset.labels, g))) for g in groups]
    return TaskStream(tasks, order, groups)


def augment(x, spec, rng):
    """``scale * (x * keep_mask) + noise``, independently per row.

    Accepts one vector or a batch of row vectors. The number of draws taken
    from ``rng`` depends only on the input shape, not on ``spec``.
    """
    x = np.asarray(x, dtype=np.float64)
    rows = np.atleast_2d(x)
    n, d = rows.shape
    scale = rng.uniform(1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter, size=(n, 1))
    keep = rng.random((n, d)) >= spec.drop_prob
    noise = rng.standard_normal((n, d))
    y = rows * keep
    if spec.scale_jitter > 0:
        y = y * scale
    if spec.noise_sigma > 0:
        y = y + spec.noise_sigma * noise
    return y.reshape(x.shape)


def load_csv(path):
    """Read rows of ``f1,...,fd,label``."""
    samples, labels, dim = [], [], None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise CCLError(f"parse error at line {lineno}")
            if dim is None:
                dim = len(row) - 1
            elif len(row) - 1 != dim:
                raise CCLError(f"inconsistent dimensions at line {lineno}")
            try:
                feats = [float(c) for c in row[:-1]]
                label = int(row[-1])
            except ValueError:
                raise CCLError(f"parse error at line {lineno}") from None
            samples.append(feats)
            labels.append(label)
    if not samples:
        raise CCLError("empty dataset")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0:
        raise CCLError("negative label")
    return LabeledDataset(np.asarray(samples, dtype=np.float64), labels, int(labels.max()) + 1)


def save_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for x, y in zip(dataset.samples, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
