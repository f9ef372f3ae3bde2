# %% [markdown]
# Choosing rehearsal exemplars by view variance.
#
# After a task, its samples are embedded and clustered. Inside each cluster we
# keep the samples whose embeddings move least across random augmentations.

# %%
import numpy as np

from ccl.datastream import AugmentSpec, generate_synthetic, split_tasks
from ccl.experiment import RunConfig, init_state, train_task
from ccl.rehearsal import rank_exemplars, select_random

config = RunConfig(method="ccl", lambda1=0.9, lambda2=0.1, lambda3=0.1, num_classes=4,
                   per_class=60, input_dim=16, t_steps=2, epochs_per_task=10)
data = generate_synthetic(4, 60, 16, class_spread=5.0, within_spread=1.0, seed=0)
stream = split_tasks(data, 2, seed=0)
task = stream.tasks[0]
print("task 1 classes", stream.class_groups[0], "samples", len(task))

# %%
state = init_state(config)
history = train_task(state, task.samples, config, task_id=0)
# the first step sees an empty negative queue (loss exactly zero); later values grow as the queue fills
totals = [h["total"] for h in history]
print("mean loss, steps 2-5:", np.mean(totals[1:5]), " last 5:", np.mean(totals[-5:]))

# %%
sel = rank_exemplars(task.samples, state.theta_q, k=2, n_per_cluster=10, l=6, seed=0,
                     augmenter=AugmentSpec(), task_id=0)
print("kept", len(sel.indices), "of", len(task))
for c in range(2):
    members = sel.cluster_result.assignments == c
    print(f"cluster {c}: size {members.sum()}, labels kept {np.bincount(task.labels[sel.indices[sel.clusters == c]])}")
print("variance of kept samples, mean", sel.scores.mean())

# %%
# How purely do the clusters follow the true classes?
a = sel.cluster_result.assignments
purity = sum(np.bincount(task.labels[a == c]).max() for c in range(2)) / len(a)
print("cluster purity", purity)

# %%
# The uniform baseline draws the same budget without looking at the data.
print("random pick", select_random(len(task), len(sel.indices), seed=0)[:10], "...")
