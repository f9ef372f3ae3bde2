# %% [markdown]
# A full continual run: five tasks, three methods, one seed.
#
# Each method trains task after task with a checkpoint after each. A linear
# probe on frozen embeddings gives the accuracy matrix a[i, j] (encoder after
# task i, probed on task j), from which forgetting and forward transfer follow.

# %%
import numpy as np

from ccl.experiment import RunConfig, run_experiment

base = dict(lambda1=0.9, lambda2=0.1, lambda3=0.1, seed=0)

# %%
reports = {}
for method in ("finetune", "simple_rehearsal", "ccl", "upper_bound"):
    rep = run_experiment(RunConfig(method=method, **base))
    reports[method] = rep
    print(f"{method:17s} top-1 {rep.final_top1:.4f}  F {rep.forgetting:.4f}  "
          f"FT {rep.forward_transfer:.4f}  memory {rep.memory_sizes}  {rep.wall_clock:.1f}s")

# %%
np.set_printoptions(precision=3, suppress=True)
print("accuracy matrix, finetune\n", np.array(reports["finetune"].accuracy))
print("accuracy matrix, ccl\n", np.array(reports["ccl"].accuracy))
