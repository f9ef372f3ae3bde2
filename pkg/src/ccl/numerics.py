"""Dense float64 kernels shared by the loss, encoder and sampling code.

All functions are pure and operate on 2-D ``numpy`` arrays whose rows are
samples. Gradients elsewhere in the package are derived by hand and checked
against :func:`finite_diff_grad`.
"""

import numpy as np

from .errors import CCLError

_DEGENERATE_NORM = 1e-12
_LOG_FLOOR = 1e-300


def _as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise CCLError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def l2_normalize_rows(m):
    """Scale every row to unit Euclidean norm."""
    m = _as_matrix(m)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms < _DEGENERATE_NORM):
        raise CCLError("degenerate embedding")
    return m / norms


def softmax_rows(m, tau):
    """Row-wise softmax of ``m / tau`` with max subtraction."""
    if not tau > 0:
        raise CCLError("invalid temperature")
    m = _as_matrix(m)
    if m.shape[1] == 0:
        return m.copy()
    logits = m / tau
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def similarity_matrix(a, b):
    """Pairwise dot products ``a @ b.T`` between unit-norm row sets."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise CCLError("dimension mismatch")
    return a @ b.T


def row_cross_entropy(p_target, p_pred):
    """Mean over rows of ``sum_j -p_target[i, j] * log(p_pred[i, j])``.

    The literal double sum equals ``rows * row_cross_entropy(...)``.
    """
    p_target = _as_matrix(p_target)
    p_pred = _as_matrix(p_pred)
    if p_target.shape != p_pred.shape:
        raise CCLError("shape mismatch")
    if np.any(p_pred <= _LOG_FLOOR):
        raise CCLError("log underflow")
    return float(-(p_target * np.log(p_pred)).sum() / p_target.shape[0])


def sum_dim_variance(vectors):
    """Total population variance, summed over feature columns."""
    vectors = _as_matrix(vectors)
    if vectors.shape[0] < 2:
        raise CCLError("need at least two views")
    # shifting by the first row keeps identical views at exactly zero
    shifted = vectors - vectors[0]
    centered = shifted - shifted.mean(axis=0)
    return float((centered**2).mean(axis=0).sum())


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape).

    ``f`` receives a perturbed copy of ``x``; the result has ``x``'s shape.
    """
    if not eps > 0:
        raise CCLError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise CCLError("objective not finite")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
