"""InfoNCE against a bank of negatives, and the FIFO key queues."""

from dataclasses import dataclass

import numpy as np

from .errors import CCLError


@dataclass
class ContrastiveResult:
    loss: float
    grad_q: np.ndarray
    per_row: np.ndarray


class NegativeQueue:
    """Fixed-capacity FIFO of unit-norm key vectors, oldest first.

    Used both for the MoCo memory bank and for the extra sample queue that
    only ever holds keys of rehearsed old-task samples.
    """

    def __init__(self, capacity, dim):
        if capacity < 0:
            raise CCLError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._entries = np.empty((0, self.dim))

    def __len__(self):
        return self._entries.shape[0]

    @property
    def entries(self):
        """Read-only view, oldest entry first."""
        view = self._entries.view()
        view.flags.writeable = False
        return view

    def snapshot(self):
        return self._entries.copy()

    def push(self, keys):
        """Append ``keys`` in row order, evicting the oldest beyond capacity."""
        keys = np.asarray(keys, dtype=np.float64)
        if keys.size == 0:
            return self
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise CCLError("dimension mismatch")
        if np.any(np.abs(np.linalg.norm(keys, axis=1) - 1.0) > 1e-6):
            raise CCLError("unnormalized key")
        merged = np.concatenate([self._entries, keys])
        start = max(0, merged.shape[0] - self.capacity)
        self._entries = merged[start:].copy()
        return self

    def copy(self):
        out = NegativeQueue(self.capacity, self.dim)
        out._entries = self._entries.copy()
        return out


def queue_push(queue, keys):
    return queue.push(keys)


def _negatives_array(negatives, dim):
    if isinstance(negatives, NegativeQueue):
        negatives = negatives.snapshot()
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.size == 0:
        return np.empty((0, dim))
    if negatives.ndim != 2 or negatives.shape[1] != dim:
        raise CCLError("dimension mismatch")
    return negatives


def info_nce(q, k_plus, negatives, tau):
    """Mean InfoNCE loss of queries against their positives and a negative set.

    Row ``i`` scores ``q[i] . k_plus[i]`` against ``q[i] . n`` for every
    negative ``n``. Gradient flows to ``q`` only.
    """
    if not tau > 0:
        raise CCLError("invalid temperature")
    q = np.asarray(q, dtype=np.float64)
    k_plus = np.asarray(k_plus, dtype=np.float64)
    if q.shape != k_plus.shape or q.ndim != 2:
        raise CCLError("query/key shape mismatch")
    B, D = q.shape
    neg = _negatives_array(negatives, D)

    pos_logit = np.sum(q * k_plus, axis=1, keepdims=True) / tau
    logits = np.concatenate([pos_logit, q @ neg.T / tau], axis=1)
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    denom = e.sum(axis=1, keepdims=True)
    per_row = (top + np.log(denom) - pos_logit)[:, 0]
    probs = e / denom

    # d loss_i / d q_i = (sum_j p_ij v_j - k_plus_i) / tau, then mean over rows
    grad = probs[:, :1] * k_plus + probs[:, 1:] @ neg - k_plus
    grad_q = grad / (tau * B)
    return ContrastiveResult(float(per_row.mean()), grad_q, per_row)


def esq_loss(z_q, z_k, esq, tau, rows=None):
    """InfoNCE with the extra sample queue as the negative set.

    ``rows`` optionally restricts the loss to a boolean mask of batch rows;
    masked-out rows receive zero gradient and the mean runs over kept rows.
    """
    if rows is None:
        return info_nce(z_q, z_k, esq, tau)
    rows = np.asarray(rows, dtype=bool)
    z_q = np.asarray(z_q, dtype=np.float64)
    grad = np.zeros_like(z_q)
    per_row = np.zeros(z_q.shape[0])
    if not rows.any():
        return ContrastiveResult(0.0, grad, per_row)
    sub = info_nce(z_q[rows], np.asarray(z_k)[rows], esq, tau)
    grad[rows] = sub.grad_q
    per_row[rows] = sub.per_row
    return ContrastiveResult(sub.loss, grad, per_row)
