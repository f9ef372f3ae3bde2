# %% [markdown]
# Component ladder: add one piece at a time and watch the seed-mean accuracy.
#
# Same sweep as `ccl ablate --config demos/configs/ablate_components.json`,
# written out in Python.

# %%
import numpy as np

from ccl.experiment import COMPONENT_LADDER, RunConfig, run_experiment

seeds = [0, 1, 2]
base = dict(lambda1=0.9, lambda2=0.1, lambda3=0.1)

# %%
for name, over in COMPONENT_LADDER:
    acc = [run_experiment(RunConfig(seed=s, **dict(base, **over))).final_top1 for s in seeds]
    print(f"{name:20s} {np.mean(acc):.4f} +/- {np.std(acc, ddof=1):.4f}")
