"""Acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (run with ``-s`` to see them
inline); the lines are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from ccl import cli
from ccl.contrastive import NegativeQueue, esq_loss, info_nce
from ccl.distillation import kd_loss, teacher_epoch_update
from ccl.encoder import EncoderParams, flatten, momentum_update
from ccl.evaluation import forgetting, forward_transfer
from ccl.experiment import COMPONENT_LADDER, RunConfig, run_experiment, train_task
from ccl.numerics import finite_diff_grad, row_cross_entropy, similarity_matrix, softmax_rows
from ccl.datastream import AugmentSpec
from ccl.encoder import init_params
from ccl.rehearsal import kmeans, select_exemplars

from conftest import rel_err, unit_rows
from oracles import (forgetting_ref, forward_transfer_ref, hand_step_single_batch_task,
                     info_nce_rows, select_exemplars_ref)
from test_experiment import small, tiny_state

RESULTS = []
LAMBDAS = dict(lambda1=0.9, lambda2=0.1, lambda3=0.1)
TREND_SEEDS = (0, 1, 2)


def verdict(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{number}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_gradient_correctness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {"moco": 0.0, "esq": 0.0, "kd": 0.0}
    for _ in range(50):
        B, D, Qn = rng.integers(1, 5), rng.integers(2, 9), rng.integers(1, 17)
        tau = rng.uniform(0.1, 1.0)
        q, k, neg = unit_rows(rng, B, D), unit_rows(rng, B, D), unit_rows(rng, Qn, D)
        res = info_nce(q, k, neg, tau)
        num = finite_diff_grad(lambda v: info_nce(v, k, neg, tau).loss, q)
        worst["moco"] = max(worst["moco"], rel_err(res.grad_q, num))

        esq = NegativeQueue(16, D).push(unit_rows(rng, rng.integers(1, 17), D))
        res = esq_loss(q, k, esq, tau)
        num = finite_diff_grad(lambda v: esq_loss(v, k, esq, tau).loss, q)
        worst["esq"] = max(worst["esq"], rel_err(res.grad_q, num))

        zT, zTq, zS, zSq = (unit_rows(rng, B, D) for _ in range(4))
        res = kd_loss(zT, zTq, zS, zSq, 0.1)
        g_s = finite_diff_grad(lambda v: kd_loss(zT, zTq, v, zSq, 0.1).loss, zS)
        g_sq = finite_diff_grad(lambda v: kd_loss(zT, zTq, zS, v, 0.1).loss, zSq)
        worst["kd"] = max(worst["kd"], rel_err(np.concatenate([res.grad_zS, res.grad_zSq]),
                                               np.concatenate([g_s, g_sq])))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 10
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items())
    verdict(1, "gradient correctness (50 instances each)", ok, f"{detail}; {elapsed:.2f}s")


def test_loss_oracles():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    err_nce = err_kd = 0.0
    for _ in range(20):
        B, D, Qn = rng.integers(1, 5), rng.integers(2, 9), rng.integers(0, 17)
        q, k, neg = unit_rows(rng, B, D), unit_rows(rng, B, D), unit_rows(rng, Qn, D)
        res = info_nce(q, k, neg, 0.2)
        ref = info_nce_rows(q.tolist(), k.tolist(), neg.tolist(), 0.2)
        err_nce = max(err_nce, np.max(np.abs(res.per_row - ref)), abs(res.loss - sum(ref) / B))

        zT, zTq, zS, zSq = (unit_rows(rng, B, D) for _ in range(4))
        composed = row_cross_entropy(softmax_rows(similarity_matrix(zT, zTq), 0.1),
                                     softmax_rows(similarity_matrix(zS, zSq), 0.1))
        err_kd = max(err_kd, abs(kd_loss(zT, zTq, zS, zSq, 0.1).loss - composed))
    worked = info_nce([[1.0, 0.0]], [[1.0, 0.0]], [[-1.0, 0.0]], 1.0).loss
    closed = -math.log(math.e / (math.e + math.exp(-1.0)))
    elapsed = time.perf_counter() - t0
    ok = (err_nce <= 1e-10 and err_kd <= 1e-10 and abs(worked - closed) <= 1e-15
          and round(worked, 6) == 0.126928 and elapsed < 1)
    verdict(2, "loss oracles", ok,
            f"info_nce err {err_nce:.1e}, kd err {err_kd:.1e}, worked value {worked:.6f}; {elapsed:.3f}s")


def test_momentum_semantics():
    rng = np.random.default_rng(3)
    widths = [3, 5, 2]
    a, b = init_params(widths, 1), init_params(widths, 2)
    for p in (a, b):
        for bias in p.biases:
            bias[:] = rng.standard_normal(bias.shape)
    endpoints = (momentum_update(a, b, 0.0).equals(b) and momentum_update(a, b, 1.0).equals(a)
                 and teacher_epoch_update(a, b, 0.0).equals(b) and teacher_epoch_update(a, b, 1.0).equals(a))

    m, target, decay_err = 0.9, a.copy(), 0.0
    gap0 = flatten(a) - flatten(b)
    for step in range(1, 51):
        target = momentum_update(target, b, m)
        decay_err = max(decay_err, np.max(np.abs((flatten(target) - flatten(b)) - m**step * gap0)))

    moved = flatten(teacher_epoch_update(a, b, 0.996)) - flatten(a)
    share_err = np.max(np.abs(moved - 0.004 * (flatten(b) - flatten(a))))
    ok = endpoints and decay_err <= 1e-9 and share_err <= 1e-15
    verdict(3, "momentum semantics", ok,
            f"endpoints exact={endpoints}, m^k err {decay_err:.1e}, 0.996 step err {share_err:.1e}")


def test_composition_oracle():
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        config = small(input_dim=3, hidden=[5], embed_dim=4, batch_size=3, queue_size=4,
                       esq_size=4, epochs_per_task=1, seed=seed)
        state = tiny_state(config, rng, n_old=2)
        task = rng.standard_normal((1, 3))
        expected = hand_step_single_batch_task(state, task, config, task_id=1)
        history = train_task(state, task, config, task_id=1)
        diffs = [abs(history[0]["total"] - expected["total"])]
        for name in ("theta_q", "theta_k", "theta_t", "velocity"):
            diffs.append(np.max(np.abs(flatten(getattr(state, name)) - flatten(expected[name]))))
        diffs.append(np.max(np.abs(state.queue.entries - expected["queue"])))
        diffs.append(np.max(np.abs(state.esq.entries - expected["esq"])))
        worst = max(worst, max(diffs))
    verdict(4, "one train_task step vs hand-stepped composition", worst <= 1e-10,
            f"max abs diff {worst:.1e} over 3 instances")


def _ladder_configs():
    cells = dict((name, dict(LAMBDAS, **over)) for name, over in COMPONENT_LADDER)
    cells["upper_bound"] = dict(LAMBDAS, method="upper_bound")
    return cells


@pytest.fixture(scope="module")
def trend_runs():
    """Seed-wise reports for every ladder step plus the joint-training bound."""
    out = {}
    for name, cfg in _ladder_configs().items():
        out[name] = [run_experiment(RunConfig(seed=s, **cfg)) for s in TREND_SEEDS]
    return out


def _mean(reports, field):
    return float(np.mean([getattr(r, field) for r in reports]))


@pytest.mark.slow
def test_continual_trend(trend_runs):
    ccl, sr, ft, ub = (trend_runs[k] for k in ("+esq", "+random_sampling", "finetune", "upper_bound"))
    acc = {n: _mean(r, "final_top1") for n, r in (("ccl", ccl), ("sr", sr), ("ft", ft), ("ub", ub))}
    F_ccl, F_ft = _mean(ccl, "forgetting"), _mean(ft, "forgetting")
    slowest = max(r.wall_clock for reps in trend_runs.values() for r in reps)
    ok = (acc["ccl"] >= acc["sr"] >= acc["ft"] and acc["ccl"] - acc["ft"] >= 0.01
          and F_ccl <= F_ft and acc["ub"] >= acc["ccl"] and slowest < 300)
    verdict(5, "continual trend", ok,
            f"top-1 ccl {acc['ccl']:.4f}, simple_rehearsal {acc['sr']:.4f}, finetune {acc['ft']:.4f}, "
            f"upper_bound {acc['ub']:.4f}; F ccl {F_ccl:.4f} <= finetune {F_ft:.4f}; slowest cell {slowest:.1f}s")


@pytest.mark.slow
def test_ablation_ladder(trend_runs):
    names = [n for n, _ in COMPONENT_LADDER]
    acc = [np.array([r.final_top1 for r in trend_runs[n]]) for n in names]
    means = [float(a.mean()) for a in acc]
    n = len(TREND_SEEDS)
    # an adjacent step may drop by at most one standard error of the difference of means
    steps_ok = all(means[i + 1] >= means[i] - math.sqrt(acc[i].var(ddof=1) / n + acc[i + 1].var(ddof=1) / n)
                   for i in range(2))
    endpoints_ok = means[2] >= means[0] and means[-1] == max(means)
    ladder = ", ".join(f"{nm} {m:.4f}" for nm, m in zip(names, means))
    verdict(6, "ablation ladder", steps_ok and endpoints_ok, ladder)


def test_metric_formulas():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(2, 9))
        a, r = rng.uniform(size=(T, T)), rng.uniform(size=T)
        worst = max(worst, abs(forgetting(a) - forgetting_ref(a.tolist())),
                    abs(forward_transfer(a, r) - forward_transfer_ref(a.tolist(), r.tolist())))
    const = forgetting(np.full((4, 4), 0.37))
    verdict(7, "metric formulas", worst <= 1e-12 and const == 0.0,
            f"max diff {worst:.1e} over 100 matrices; constant matrix F = {const}")


def test_determinism(tmp_path):
    import json
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small().to_dict()))
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = [cli.main(["run", "--config", str(cfg_path), "--out", str(d)]) for d in dirs]
    names = ["accuracy.csv"] + sorted(p.name for p in dirs[0].glob("*.ckpt"))
    same = all((dirs[0] / nm).read_bytes() == (dirs[1] / nm).read_bytes() for nm in names)
    verdict(8, "determinism", codes == [0, 0] and same and len(names) == 3,
            f"{len(names)} files byte-identical={same}")


def test_sampler_correctness():
    rng = np.random.default_rng(5)
    spec = AugmentSpec()
    matches = monotone = 0
    for i in range(20):
        D = int(rng.integers(2, 6))
        samples = rng.standard_normal((30, D)) + rng.integers(0, 3, 30)[:, None] * 3.0
        params = init_params([D, 12, 4], i)
        k, n = int(rng.integers(1, 5)), int(rng.integers(1, 8))
        got = select_exemplars(samples, params, k, n, 6, i, spec, task_id=i)
        matches += np.array_equal(got, select_exemplars_ref(samples, params, k, n, 6, i, spec, task_id=i))
        hist = kmeans(rng.standard_normal((30, D)), k, seed=i).inertia_history
        monotone += all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))

    fifo_ok = True
    for capacity in range(9):
        stream = np.eye(10)
        for mask in range(2**9):
            q, ref, start = NegativeQueue(capacity, 10), [], 0
            for pos in range(1, 11):
                if pos == 10 or mask >> (pos - 1) & 1:
                    q.push(stream[start:pos])
                    ref = (ref + list(range(start, pos)))[-capacity:] if capacity else []
                    start = pos
            whole = NegativeQueue(capacity, 10).push(stream)
            fifo_ok &= q.entries.argmax(axis=1).tolist() == ref
            fifo_ok &= np.array_equal(q.entries, whole.entries)
    ok = matches == 20 and monotone == 20 and fifo_ok
    verdict(9, "sampler correctness", ok,
            f"selection matches {matches}/20, monotone inertia {monotone}/20, FIFO suite capacities 0-8 ok={fifo_ok}")
