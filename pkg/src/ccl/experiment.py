"""Continual contrastive training runs and the baseline methods.

A run walks a class-incremental task stream. Each task trains the query
encoder on the task's samples pooled with the rehearsal memory, using

    total = lambda1 * moco + lambda2 * esq + lambda3 * kd

then refreshes the memory from the finished task. Baselines are the same
loop with parts switched off; ``upper_bound`` trains on all data jointly.
"""

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import encoder
from ._rng import derive_seed, substream
from .contrastive import NegativeQueue, esq_loss, info_nce
from .datastream import AugmentSpec, augment, generate_synthetic, load_csv, split_tasks
from .distillation import kd_loss, teacher_epoch_update, teacher_init
from .errors import ConfigError, DivergenceError
from .evaluation import (ProbeConfig, accuracy_matrix, forgetting, forward_transfer,
                         pooled_top1, random_init_accuracies)
from .rehearsal import ExemplarStore, rank_exemplars, select_random

log = logging.getLogger(__name__)

METHODS = ("ccl", "finetune", "simple_rehearsal", "upper_bound")
SAMPLERS = ("none", "random", "variance")
REQUIRED = ("method", "lambda1", "lambda2", "lambda3")

# finetune -> +random sampling -> +variance sampling -> +KD -> +ESQ
COMPONENT_LADDER = (
    ("finetune", {"method": "finetune"}),
    ("+random_sampling", {"method": "simple_rehearsal"}),
    ("+variance_sampling", {"method": "ccl", "sampler": "variance", "lambda2": 0.0, "lambda3": 0.0}),
    ("+kd", {"method": "ccl", "sampler": "variance", "lambda2": 0.0}),
    ("+esq", {"method": "ccl", "sampler": "variance"}),
)


@dataclass
class RunConfig:
    method: str
    lambda1: float
    lambda2: float
    lambda3: float
    seed: int = 0
    # task stream
    t_steps: int = 5
    source: str = "synthetic"
    csv_path: str = None
    num_classes: int = 10
    per_class: int = 200
    input_dim: int = 32
    class_spread: float = 5.0
    within_spread: float = 1.0
    # training
    epochs_per_task: int = 30
    batch_size: int = 32
    tau: float = 0.2
    tau_kd: float = 0.1
    key_momentum: float = 0.99
    teacher_momentum: float = 0.996
    queue_size: int = 256
    esq_size: int = 128
    esq_rows: str = "all"
    replay_ratio: float = None
    hidden: list = field(default_factory=lambda: [64, 64])
    embed_dim: int = 16
    lr: float = 0.05
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    aug_noise: float = 0.1
    aug_drop: float = 0.1
    aug_jitter: float = 0.1
    # rehearsal memory
    sampler: str = None
    kmeans_k: int = None
    n_per_cluster: int = 20
    views: int = 6
    memory_mode: str = "per_class"
    memory_total: int = None
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    # linear probe
    probe_epochs: int = 100
    probe_lr: float = 0.5
    probe_decay_epoch: int = 80
    probe_weight_decay: float = 0.0
    probe_split: float = 0.8

    @classmethod
    def from_dict(cls, data):
        """Validate a JSON-style mapping and fill in method-dependent defaults."""
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
        missing = [k for k in REQUIRED if k not in data]
        if missing:
            raise ConfigError(f"missing required field(s): {', '.join(missing)}")
        return cls(**data).resolved()

    def resolved(self):
        """Copy with every defaulted choice made explicit, after validation."""
        c = RunConfig(**asdict(self))
        c._validate()
        if c.sampler is None:
            c.sampler = {"ccl": "variance", "simple_rehearsal": "random"}.get(c.method, "none")
        if c.method != "ccl":
            c.lambda2 = 0.0
            c.lambda3 = 0.0
        if c.method in ("finetune", "upper_bound"):
            c.sampler = "none"
        c.hidden = [int(h) for h in c.hidden]
        return c

    def _validate(self):
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        def number(name, integer=False):
            v = getattr(self, name)
            ok = isinstance(v, int) if integer else isinstance(v, (int, float))
            if isinstance(v, bool) or not ok:
                bad(name, "must be an integer" if integer else "must be a number")
            if not np.isfinite(v):
                bad(name, "must be finite")
            return v

        if self.method not in METHODS:
            bad("method", f"must be one of {', '.join(METHODS)}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if number(name) < 0:
                bad(name, "must be >= 0")
        for name in ("seed", "t_steps", "num_classes", "per_class", "input_dim", "epochs_per_task",
                     "batch_size", "queue_size", "esq_size", "embed_dim", "n_per_cluster", "views",
                     "kmeans_max_iter", "probe_epochs", "probe_decay_epoch"):
            number(name, integer=True)
        for name in ("t_steps", "num_classes", "per_class", "input_dim", "epochs_per_task",
                     "batch_size", "embed_dim", "n_per_cluster", "kmeans_max_iter", "probe_epochs"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        for name in ("queue_size", "esq_size", "probe_decay_epoch"):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        if self.views < 2:
            bad("views", "must be >= 2")
        for name in ("tau", "tau_kd", "lr", "class_spread", "within_spread", "probe_lr"):
            if not number(name) > 0:
                bad(name, "must be > 0")
        for name in ("key_momentum", "teacher_momentum"):
            if not 0 <= number(name) <= 1:
                bad(name, "must be in [0, 1]")
        if not 0 <= number("sgd_momentum") < 1:
            bad("sgd_momentum", "must be in [0, 1)")
        for name in ("weight_decay", "aug_noise", "aug_jitter", "probe_weight_decay", "kmeans_tol"):
            if number(name) < 0:
                bad(name, "must be >= 0")
        if not 0 <= number("aug_drop") < 1:
            bad("aug_drop", "must be in [0, 1)")
        if not 0 < number("probe_split") < 1:
            bad("probe_split", "must be in (0, 1)")
        if self.source not in ("synthetic", "csv"):
            bad("source", "must be 'synthetic' or 'csv'")
        if self.source == "csv" and not self.csv_path:
            bad("csv_path", "required when source is 'csv'")
        if self.esq_rows not in ("all", "new_only"):
            bad("esq_rows", "must be 'all' or 'new_only'")
        if self.sampler is not None and self.sampler not in SAMPLERS:
            bad("sampler", f"must be one of {', '.join(SAMPLERS)}")
        if self.memory_mode not in ("per_class", "fixed_total"):
            bad("memory_mode", "must be 'per_class' or 'fixed_total'")
        if self.memory_mode == "fixed_total":
            if self.memory_total is None or number("memory_total", integer=True) < 1:
                bad("memory_total", "required (>= 1) when memory_mode is 'fixed_total'")
        if self.kmeans_k is not None and number("kmeans_k", integer=True) < 1:
            bad("kmeans_k", "must be >= 1")
        if self.replay_ratio is not None and not 0 < number("replay_ratio") < 1:
            bad("replay_ratio", "must be in (0, 1)")
        if not isinstance(self.hidden, (list, tuple)) or any(
                isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in self.hidden):
            bad("hidden", "must be a list of positive integers")
        if self.t_steps > self.num_classes and self.source == "synthetic":
            bad("t_steps", "must not exceed num_classes")

    @property
    def widths(self):
        return [self.input_dim] + list(self.hidden) + [self.embed_dim]

    @property
    def augment_spec(self):
        return AugmentSpec(self.aug_noise, self.aug_drop, self.aug_jitter)

    @property
    def probe(self):
        return ProbeConfig(epochs=self.probe_epochs, lr=self.probe_lr, decay_epoch=self.probe_decay_epoch,
                           weight_decay=self.probe_weight_decay, split=self.probe_split,
                           seed=derive_seed(self.seed, "probe"))

    def to_dict(self):
        return asdict(self)


def load_config(path, seed=None):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    if seed is not None:
        data["seed"] = seed
    return RunConfig.from_dict(data)


@dataclass
class ModelState:
    theta_q: encoder.EncoderParams
    theta_k: encoder.EncoderParams
    theta_t: encoder.EncoderParams
    queue: NegativeQueue
    esq: NegativeQueue
    velocity: encoder.EncoderParams
    store: ExemplarStore
    task_index: int = 0
    steps: int = 0


def init_state(config):
    theta_q = encoder.init_params(config.widths, derive_seed(config.seed, "init"))
    return ModelState(
        theta_q=theta_q,
        theta_k=theta_q.copy(),
        theta_t=theta_q.copy(),
        queue=NegativeQueue(config.queue_size, config.embed_dim),
        esq=NegativeQueue(config.esq_size, config.embed_dim),
        velocity=theta_q.zeros_like(),
        store=ExemplarStore(config.input_dim),
    )


def _add(a, b):
    return encoder.EncoderParams([x + y for x, y in zip(a.weights, b.weights)],
                                 [x + y for x, y in zip(a.biases, b.biases)])


def train_step(state, batch, old, config, key):
    """One minibatch update. ``old`` flags rows that came from the memory.

    ``key`` (task, epoch, step) names the random substreams for this step.
    Returns a dict of the loss terms.
    """
    spec = config.augment_spec
    old = np.asarray(old, dtype=bool)
    rng = substream(config.seed, "augment", *key)
    x_q = augment(batch, spec, rng)
    x_k = augment(batch, spec, rng)
    z_q, trace_q = encoder.forward(state.theta_q, x_q)
    z_k = encoder.embed(state.theta_k, x_k)

    moco = info_nce(z_q, z_k, state.queue, config.tau)
    g_z = config.lambda1 * moco.grad_q
    losses = {"moco": moco.loss, "esq": 0.0, "kd": 0.0}
    if config.lambda2 > 0:
        rows = None if config.esq_rows == "all" else ~old
        esq = esq_loss(z_q, z_k, state.esq, config.tau, rows=rows)
        g_z = g_z + config.lambda2 * esq.grad_q
        losses["esq"] = esq.loss
    grads = encoder.backward(trace_q, state.theta_q, g_z)

    if config.lambda3 > 0 and old.any():
        x_s = batch[old]
        x_sq = augment(x_s, spec, substream(config.seed, "kd_aug", *key))
        z_s, trace_s = encoder.forward(state.theta_q, x_s)
        z_sq, trace_sq = encoder.forward(state.theta_q, x_sq)
        kd = kd_loss(encoder.embed(state.theta_t, x_s), encoder.embed(state.theta_t, x_sq),
                     z_s, z_sq, config.tau_kd)
        grads = _add(grads, encoder.backward(trace_s, state.theta_q, config.lambda3 * kd.grad_zS))
        grads = _add(grads, encoder.backward(trace_sq, state.theta_q, config.lambda3 * kd.grad_zSq))
        losses["kd"] = kd.loss

    total = config.lambda1 * losses["moco"] + config.lambda2 * losses["esq"] + config.lambda3 * losses["kd"]
    losses["total"] = total
    if not np.isfinite(total):
        raise DivergenceError("diverged at task {}, epoch {}, step {}".format(*key))
    try:
        state.theta_q, state.velocity = encoder.sgd_step(
            state.theta_q, grads, state.velocity, config.lr, config.sgd_momentum, config.weight_decay)
    except DivergenceError:
        raise DivergenceError("diverged at task {}, epoch {}, step {}".format(*key)) from None
    state.theta_k = encoder.momentum_update(state.theta_k, state.theta_q, config.key_momentum)

    state.queue.push(z_k)
    if config.lambda2 > 0 and old.any():
        x_es = augment(batch[old], spec, substream(config.seed, "esq_aug", *key))
        state.esq.push(encoder.embed(state.theta_k, x_es))
    state.steps += 1
    return losses


def _minibatches(config, task_id, epoch, n_new, n_old):
    """Index batches into the pool ``[new rows..., old rows...]``."""
    B = config.batch_size
    if config.replay_ratio is None or n_old == 0:
        perm = substream(config.seed, "shuffle", task_id, epoch).permutation(n_new + n_old)
        return [perm[s:s + B] for s in range(0, len(perm), B)]
    # fixed old/new mix: new rows drive the epoch, old rows are cycled
    rng = substream(config.seed, "shuffle", task_id, epoch)
    new = rng.permutation(n_new)
    n_old_per = max(1, int(round(config.replay_ratio * B)))
    n_new_per = max(1, B - n_old_per)
    old_cycle = n_new + rng.permutation(n_old)
    out = []
    for b, s in enumerate(range(0, n_new, n_new_per)):
        o = np.take(old_cycle, np.arange(b * n_old_per, (b + 1) * n_old_per), mode="wrap")
        out.append(np.concatenate([new[s:s + n_new_per], o]))
    return out


def train_task(state, task_samples, config, task_id, log_every=0):
    """Train through one task: minibatch loop, then a teacher update per epoch.

    ``task_samples`` carries no labels; old rows come from ``state.store``.
    """
    task_samples = np.asarray(task_samples, dtype=np.float64)
    old_samples = state.store.samples
    pool = np.concatenate([task_samples, old_samples])
    is_old = np.concatenate([np.zeros(len(task_samples), bool), np.ones(len(old_samples), bool)])
    state.theta_t = teacher_init(state.theta_q)
    history = []
    for epoch in range(config.epochs_per_task):
        for step, idx in enumerate(_minibatches(config, task_id, epoch, len(task_samples), len(old_samples))):
            losses = train_step(state, pool[idx], is_old[idx], config, (task_id, epoch, step))
            history.append(losses)
        state.theta_t = teacher_epoch_update(state.theta_t, state.theta_q, config.teacher_momentum)
        if log_every and (epoch + 1) % log_every == 0:
            log.info("task %d epoch %d: total %.4f", task_id, epoch + 1, history[-1]["total"])
    state.task_index = task_id + 1
    return history


def memory_budget(config, k):
    """Exemplars kept per cluster for one task."""
    if config.memory_mode == "per_class":
        return config.n_per_cluster
    per_task = config.memory_total // max(1, config.t_steps - 1)
    return max(1, per_task // k)


def update_memory(state, task, config, task_id):
    """Add the finished task's exemplars to the store; returns the selection (or None)."""
    if config.sampler == "none":
        return None
    k = config.kmeans_k or len(np.unique(task.labels))
    k = min(k, len(task))
    n = memory_budget(config, k)
    if config.sampler == "variance":
        sel = rank_exemplars(task.samples, state.theta_q, k, n, config.views, config.seed,
                             config.augment_spec, task_id=task_id,
                             kmeans_max_iter=config.kmeans_max_iter, kmeans_tol=config.kmeans_tol)
        state.store.add(task_id, task.samples[sel.indices], sel.clusters, sel.scores, budget=k * n)
        return sel
    budget = min(k * n, len(task))
    idx = select_random(len(task), budget, derive_seed(config.seed, "random_sampler", task_id))
    state.store.add(task_id, task.samples[idx], budget=k * n)
    return idx


def build_dataset(config):
    if config.source == "csv":
        return load_csv(config.csv_path)
    return generate_synthetic(config.num_classes, config.per_class, config.input_dim,
                              config.class_spread, config.within_spread, derive_seed(config.seed, "data"))


def build_stream(config):
    data = build_dataset(config)
    if config.t_steps > data.num_classes:
        raise ConfigError("t_steps: too many steps for the dataset's classes")
    return data, split_tasks(data, config.t_steps, derive_seed(config.seed, "split"))


@dataclass
class RunReport:
    method: str
    seed: int
    accuracy: list
    random_init: list
    forgetting: float
    forward_transfer: float
    final_top1: float
    checkpoints: list
    memory_sizes: list
    wall_clock: float
    config: dict

    def to_dict(self):
        return asdict(self)


def run_experiment(config, out_dir=None, log_every=0):
    """Train every task, checkpoint after each, and evaluate.

    Writes ``resolved_config.json``, ``task{t}.ckpt``, ``report.json`` and
    ``accuracy.csv`` into ``out_dir`` when given.
    """
    if not isinstance(config, RunConfig):
        config = RunConfig.from_dict(config)
    config = config.resolved()
    t0 = time.perf_counter()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, "resolved_config.json"), config.to_dict())
    data, stream = build_stream(config)
    state = init_state(config)
    checkpoints, paths, memory_sizes = [], [], []

    if config.method == "upper_bound":
        joint = data.samples
        for t in range(config.t_steps):
            # same total epoch budget as the continual runs, one block per "task"
            train_task(state, joint, config, t, log_every)
            checkpoints.append(state.theta_q.copy())
            paths.append(_save(state.theta_q, out_dir, t))
            memory_sizes.append(0)
    else:
        for t, task in enumerate(stream.tasks):
            train_task(state, task.samples, config, t, log_every)
            checkpoints.append(state.theta_q.copy())
            paths.append(_save(state.theta_q, out_dir, t))
            update_memory(state, task, config, t)
            memory_sizes.append(len(state.store))

    probe = config.probe
    a = accuracy_matrix(checkpoints, stream, probe)
    r = random_init_accuracies(config.widths, stream, probe, seed=derive_seed(config.seed, "random_init"))
    T = config.t_steps
    report = RunReport(
        method=config.method,
        seed=config.seed,
        accuracy=a.tolist(),
        random_init=r.tolist(),
        forgetting=forgetting(a) if T > 1 else None,
        forward_transfer=forward_transfer(a, r) if T > 1 else None,
        final_top1=pooled_top1(checkpoints[-1], data, probe),
        checkpoints=paths,
        memory_sizes=memory_sizes,
        wall_clock=time.perf_counter() - t0,
        config=config.to_dict(),
    )
    if out_dir is not None:
        write_json(os.path.join(out_dir, "report.json"), report.to_dict())
        write_accuracy_csv(os.path.join(out_dir, "accuracy.csv"), [report])
    return report


def _save(params, out_dir, t):
    if out_dir is None:
        return None
    path = os.path.join(out_dir, f"task{t + 1}.ckpt")
    encoder.save_checkpoint(params, path)
    return os.path.basename(path)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_accuracy_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed", "task_i", "task_j", "accuracy"])
        for rep in reports:
            for i, row in enumerate(rep.accuracy):
                for j, acc in enumerate(row):
                    w.writerow([rep.method, rep.seed, i + 1, j + 1, repr(float(acc))])
