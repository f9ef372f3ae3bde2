"""Similarity-matrix distillation from a momentum teacher.

Teacher and student each compare clean embeddings with embeddings of one
augmented view of the same rehearsed samples. The row-softmaxed similarity
matrices are matched with cross-entropy (equal to KL up to the teacher
entropy, which is constant in the student).
"""

from dataclasses import dataclass

import numpy as np

from . import encoder
from .errors import CCLError
from .numerics import row_cross_entropy, similarity_matrix, softmax_rows


@dataclass
class DistillResult:
    loss: float
    grad_zS: np.ndarray
    grad_zSq: np.ndarray
    p_teacher: np.ndarray
    p_student: np.ndarray


def kd_loss(zT, zTq, zS, zSq, tau_kd):
    """Cross-entropy between teacher and student similarity distributions.

    Returns the loss averaged over rows; gradients are w.r.t. the student
    embeddings only.
    """
    shapes = {np.shape(a) for a in (zT, zTq, zS, zSq)}
    if len(shapes) != 1:
        raise CCLError("batch mismatch")
    zS = np.asarray(zS, dtype=np.float64)
    zSq = np.asarray(zSq, dtype=np.float64)
    B = zS.shape[0]
    p_t = softmax_rows(similarity_matrix(zT, zTq), tau_kd)
    p_s = softmax_rows(similarity_matrix(zS, zSq), tau_kd)
    loss = row_cross_entropy(p_t, p_s)
    # teacher rows sum to one, so d loss / d logits = (P^S - P^T) / B
    g_sim = (p_s - p_t) / (B * tau_kd)
    return DistillResult(loss, g_sim @ zSq, g_sim.T @ zS, p_t, p_s)


def teacher_init(student):
    """Independent copy of the student query encoder."""
    return student.copy()


def teacher_epoch_update(teacher, student, m_t=0.996):
    return encoder.momentum_update(teacher, student, m_t)
