"""Continual contrastive learning on vector data.

MoCo-style contrastive training over a class-incremental task stream, with
feature-variance exemplar rehearsal, similarity-matrix distillation from a
momentum teacher, and an extra queue of old-sample negatives.
"""

from .contrastive import NegativeQueue, esq_loss, info_nce, queue_push
from .distillation import kd_loss, teacher_epoch_update, teacher_init
from .encoder import (EncoderParams, backward, forward, init_params, load_checkpoint,
                      momentum_update, save_checkpoint, sgd_step)
from .errors import CCLError, CheckpointError, ConfigError, DivergenceError
from .evaluation import accuracy_matrix, forgetting, forward_transfer, linear_probe
from .experiment import RunConfig, RunReport, run_experiment, train_task

__version__ = "0.1.0"
