"""Command-line entry point: ``ccl {run,ablate,probe,sample,report}``.

Exit codes: 0 success, 1 I/O or other failure, 2 invalid config or
checkpoint, 3 numerical divergence.
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import encoder
from .errors import CCLError, CheckpointError, ConfigError, DivergenceError
from .evaluation import linear_probe, pooled_top1, task_splits
from .experiment import (COMPONENT_LADDER, RunConfig, build_stream, init_state, load_config,
                         run_experiment, train_task, update_memory, write_json)
from .rehearsal import rank_exemplars

log = logging.getLogger("ccl")

SWEEP_AXES = ("components", "esq_size", "kmeans_k")


def cmd_run(config_path, out_dir, seed=None):
    config = load_config(config_path, seed)
    report = run_experiment(config, out_dir)
    log.info("%s seed %d: final top-1 %.4f", report.method, report.seed, report.final_top1)
    return 0


def _sweep_cells(base, sweep):
    axis = sweep.get("axis")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis: unknown axis {axis!r} (expected one of {', '.join(SWEEP_AXES)})")
    seeds = sweep.get("seeds", [base.get("seed", 0)])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("sweep.seeds: must be a non-empty list of integers")
    if axis == "components":
        ladder = dict(COMPONENT_LADDER)
        values = sweep.get("values", [name for name, _ in COMPONENT_LADDER])
        unknown = [v for v in values if v not in ladder]
        if unknown:
            raise ConfigError(f"sweep.values: unknown ladder step(s) {unknown}")
        overrides = [(v, ladder[v]) for v in values]
    else:
        values = sweep.get("values")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep.values: required non-empty list")
        overrides = [(str(v), {axis: v}) for v in values]
    cells = []
    for name, over in overrides:
        for s in seeds:
            cfg = dict(base)
            cfg.update(over)
            cfg["seed"] = s
            RunConfig.from_dict(cfg)  # fail fast before any training
            cells.append((name, s, cfg))
    return axis, cells


def _run_cell(args):
    cfg, cell_dir = args
    rep = run_experiment(RunConfig.from_dict(cfg), cell_dir)
    return rep.final_top1, rep.forgetting, rep.forward_transfer


def cmd_ablate(config_path, out_dir, seed=None, jobs=1):
    with open(config_path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    sweep = data.pop("sweep", None)
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: required object with axis, values, seeds")
    if seed is not None:
        data["seed"] = seed
    axis, cells = _sweep_cells(data, sweep)
    os.makedirs(out_dir, exist_ok=True)
    work = [(cfg, os.path.join(out_dir, _safe(name), f"seed{s}")) for name, s, cfg in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, work))
    else:
        results = [_run_cell(w) for w in work]
    rows = summarize(axis, [(name, s) for name, s, _ in cells], results)
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "n_seeds", "top1_mean", "top1_std", "forgetting_mean",
                    "forward_transfer_mean"])
        w.writerows(rows)
    return 0


def _safe(name):
    return name.replace("+", "plus_")


def summarize(axis, keys, results):
    """One row per sweep value: mean and sample stdev over seeds."""
    order, grouped = [], {}
    for (name, _), res in zip(keys, results):
        if name not in grouped:
            order.append(name)
            grouped[name] = []
        grouped[name].append(res)
    rows = []
    for name in order:
        top1 = np.array([r[0] for r in grouped[name]])
        F = [r[1] for r in grouped[name] if r[1] is not None]
        FT = [r[2] for r in grouped[name] if r[2] is not None]
        std = float(top1.std(ddof=1)) if len(top1) > 1 else 0.0
        rows.append([axis, name, len(top1), repr(float(top1.mean())), repr(std),
                     repr(float(np.mean(F))) if F else "", repr(float(np.mean(FT))) if FT else ""])
    return rows


def cmd_probe(checkpoint_path, config_path, out_path, seed=None):
    """Per-task and pooled probe accuracy of one checkpoint, as CSV."""
    config = load_config(config_path, seed)
    params = encoder.load_checkpoint(checkpoint_path, expected_widths=config.widths)
    data, stream = build_stream(config)
    probe = config.probe
    rows = [(j + 1, linear_probe(params, tr, te, probe)) for j, (tr, te) in enumerate(task_splits(stream, probe))]
    rows.append(("pooled", pooled_top1(params, data, probe)))
    _makedirs_for(out_path)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_j", "accuracy"])
        for j, acc in rows:
            w.writerow([j, repr(float(acc))])
    return 0


def cmd_sample(config_path, out_path, checkpoint_path=None, task=1, seed=None):
    """Dump the variance-based exemplar selection for one task as CSV.

    Without a checkpoint, trains tasks ``1..task`` from scratch first.
    """
    config = load_config(config_path, seed)
    data, stream = build_stream(config)
    if not 1 <= task <= len(stream):
        raise ConfigError(f"task: must be in 1..{len(stream)}")
    t = task - 1
    if checkpoint_path is not None:
        params = encoder.load_checkpoint(checkpoint_path, expected_widths=config.widths)
    else:
        state = init_state(config)
        for u in range(task):
            train_task(state, stream.tasks[u].samples, config, u)
            if u < t:
                update_memory(state, stream.tasks[u], config, u)
        params = state.theta_q
    samples = stream.tasks[t].samples
    k = min(config.kmeans_k or len(np.unique(stream.tasks[t].labels)), len(samples))
    sel = rank_exemplars(samples, params, k, config.n_per_cluster, config.views, config.seed,
                         config.augment_spec, task_id=t, kmeans_max_iter=config.kmeans_max_iter,
                         kmeans_tol=config.kmeans_tol)
    _makedirs_for(out_path)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "sample_index", "cluster_id", "variance_score"])
        for i, c, v in zip(sel.indices, sel.clusters, sel.scores):
            w.writerow([task, int(i), int(c), repr(float(v))])
    return 0


def cmd_report(run_dirs, out_path):
    """Method x setting comparison table from several run directories."""
    by_cell, methods, settings = {}, [], []
    for d in run_dirs:
        with open(os.path.join(d, "report.json")) as fh:
            rep = json.load(fh)
        method, setting = rep["method"], f"T={rep['config']['t_steps']}"
        if method not in methods:
            methods.append(method)
        if setting not in settings:
            settings.append(setting)
        by_cell.setdefault((method, setting), []).append(rep)
    header = ["method"]
    for s in settings:
        header += [f"{s} top1_mean", f"{s} top1_std", f"{s} n", f"{s} forgetting", f"{s} forward_transfer"]
    _makedirs_for(out_path)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for m in methods:
            row = [m]
            for s in settings:
                reps = by_cell.get((m, s), [])
                if not reps:
                    row += ["", "", 0, "", ""]
                    continue
                top1 = np.array([r["final_top1"] for r in reps])
                F = [r["forgetting"] for r in reps if r["forgetting"] is not None]
                FT = [r["forward_transfer"] for r in reps if r["forward_transfer"] is not None]
                row += [repr(float(top1.mean())), repr(float(top1.std(ddof=1)) if len(top1) > 1 else 0.0),
                        len(reps), repr(float(np.mean(F))) if F else "", repr(float(np.mean(FT))) if FT else ""]
            w.writerow(row)
    return 0


def _makedirs_for(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def build_parser():
    p = argparse.ArgumentParser(prog="ccl", description="Continual contrastive learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one configuration")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)

    ab = sub.add_parser("ablate", help="sweep components, ESQ size or k-means K over seeds")
    ab.add_argument("--config", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--seed", type=int)
    ab.add_argument("--jobs", type=int, default=1)

    pr = sub.add_parser("probe", help="linear-probe a checkpoint on every task")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--config", required=True)
    pr.add_argument("--out", required=True, help="output CSV file")
    pr.add_argument("--seed", type=int)

    sa = sub.add_parser("sample", help="dump the exemplar selection for one task")
    sa.add_argument("--config", required=True)
    sa.add_argument("--out", required=True, help="output CSV file")
    sa.add_argument("--checkpoint")
    sa.add_argument("--task", type=int, default=1)
    sa.add_argument("--seed", type=int)

    rp = sub.add_parser("report", help="aggregate run directories into one table")
    rp.add_argument("run_dirs", nargs="+")
    rp.add_argument("--out", required=True, help="output CSV file")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.seed)
        if args.command == "ablate":
            return cmd_ablate(args.config, args.out, args.seed, args.jobs)
        if args.command == "probe":
            return cmd_probe(args.checkpoint, args.config, args.out, args.seed)
        if args.command == "sample":
            return cmd_sample(args.config, args.out, args.checkpoint, args.task, args.seed)
        return cmd_report(args.run_dirs, args.out)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, CheckpointError, CCLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
