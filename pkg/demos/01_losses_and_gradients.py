# %% [markdown]
# Contrastive and distillation losses, checked by hand.
#
# Embeddings live on the unit sphere. The contrastive loss scores each query
# against its positive key and a queue of negatives; the distillation loss
# compares row-softmaxed similarity matrices of a student and a teacher.

# %%
import math

import numpy as np

from ccl.contrastive import NegativeQueue, info_nce
from ccl.distillation import kd_loss
from ccl.numerics import finite_diff_grad, l2_normalize_rows

rng = np.random.default_rng(0)

# %%
# A one-row example small enough to work out by hand: q = k+ = e1, one negative -e1, tau = 1.
res = info_nce([[1.0, 0.0]], [[1.0, 0.0]], [[-1.0, 0.0]], tau=1.0)
print("loss", res.loss, "closed form", -math.log(math.e / (math.e + math.exp(-1))))

# %%
# The queue is FIFO with a fixed capacity: oldest keys fall out first.
queue = NegativeQueue(capacity=4, dim=3)
for step in range(3):
    queue.push(l2_normalize_rows(rng.standard_normal((2, 3))))
    print("after push", step, "queue holds", len(queue))

# %%
# Analytic gradient against central differences.
q = l2_normalize_rows(rng.standard_normal((4, 3)))
k = l2_normalize_rows(rng.standard_normal((4, 3)))
res = info_nce(q, k, queue, tau=0.2)
num = finite_diff_grad(lambda v: info_nce(v, k, queue, 0.2).loss, q)
print("info_nce grad max abs diff", np.abs(res.grad_q - num).max())

# %%
# Distillation: identical student and teacher give the entropy of the teacher rows,
# and the gradient vanishes.
zT, zTq = l2_normalize_rows(rng.standard_normal((4, 3))), l2_normalize_rows(rng.standard_normal((4, 3)))
same = kd_loss(zT, zTq, zT, zTq, tau_kd=0.1)
print("kd at teacher", same.loss, "grad norm", np.linalg.norm(same.grad_zS))
zS = l2_normalize_rows(zT + 0.3 * rng.standard_normal(zT.shape))
moved = kd_loss(zT, zTq, zS, zTq, tau_kd=0.1)
num = finite_diff_grad(lambda v: kd_loss(zT, zTq, v, zTq, 0.1).loss, zS)
print("kd perturbed", moved.loss, "grad max abs diff", np.abs(moved.grad_zS - num).max())
