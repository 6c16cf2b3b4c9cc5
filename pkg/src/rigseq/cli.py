"""Command line interface.

Verbs: train, eval, dump-activations, gradcheck. Shared flags:
--config INI path, --seed (overrides training.seed), --out (overrides
output.dir), --dry-run (print the resolved plan, change nothing).

RIGSEQ_THREADS caps the BLAS/OpenMP thread pools; it must take effect
before numpy loads, which is why this module exports the standard
thread variables at import time and the package root imports lazily.
"""

import os

_threads = os.environ.get("RIGSEQ_THREADS")
if _threads:
    for _var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(_var, _threads)

import argparse
import json
import sys

import numpy as np

from . import kernels, training
from .config import ExperimentConfig, assemble
from .recurrent import checkpoint
from .recurrent.models import ModelConfig, build_model


def _load_experiment(args):
    cfg = ExperimentConfig.from_ini(args.config)
    return assemble(cfg, seed=args.seed, out_dir=args.out)


def _checkpoint_path(exp):
    return os.path.join(exp.out_dir, "model.ckpt")


def cmd_train(args):
    exp = _load_experiment(args)
    summary = dict(exp.summary, backend=kernels.backend_name)
    if args.dry_run:
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    os.makedirs(exp.out_dir, exist_ok=True)

    def progress(step, name, acc, loss):
        print(f"step {step}: {name} accuracy={acc:.4f} loss={loss:.4f}",
              file=sys.stderr)

    report = training.train(
        exp.model,
        exp.sample_batch,
        exp.val,
        exp.evals,
        exp.settings,
        metrics_path=os.path.join(exp.out_dir, "metrics.csv"),
        progress=progress,
    )
    checkpoint.save_checkpoint(_checkpoint_path(exp), exp.model)
    with open(os.path.join(exp.out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_eval(args):
    exp = _load_experiment(args)
    conditions = [exp.val] + list(exp.evals)
    if args.dry_run:
        plan = {
            "checkpoint": _checkpoint_path(exp),
            "conditions": [c.name for c in conditions],
        }
        print(json.dumps(plan, indent=2, sort_keys=True))
        return 0
    model = checkpoint.load_checkpoint(_checkpoint_path(exp))
    results = {}
    for cond in conditions:
        loss, acc = evaluate_condition(model, cond, exp.settings)
        results[cond.name] = {"loss": loss, "accuracy": acc}
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0


def evaluate_condition(model, cond, settings):
    return training.evaluate(model, cond.batches, seed=settings.eval_seed)


def cmd_dump_activations(args):
    exp = _load_experiment(args)
    n_samples = 3
    out_path = os.path.join(exp.out_dir, "activations.jsonl")
    if args.dry_run:
        plan = {"samples": n_samples, "output": out_path}
        print(json.dumps(plan, indent=2, sort_keys=True))
        return 0
    model = checkpoint.load_checkpoint(_checkpoint_path(exp))
    if model.config.arch != "riglstm":
        print("dump-activations needs a selective-unit checkpoint", file=sys.stderr)
        return 2
    batch = exp.trace_batch(n_samples)
    result = training.run_batch(
        model,
        batch,
        rng=np.random.default_rng(exp.settings.eval_seed),
        tracked=False,
        collect=True,
    )
    count = 0
    with open(out_path, "w", newline="\n") as fh:
        for sample in range(batch.inputs.shape[0]):
            for step, trace in enumerate(result.traces):
                record = {
                    "sample": sample,
                    "step": step,
                    "active_cells": np.flatnonzero(trace.active[sample]).tolist(),
                    "cell_scores": [round(v, 8) for v in trace.cell_scores[sample]],
                }
                if trace.update_weights is not None:
                    record["update_weights"] = [
                        [round(v, 8) for v in w]
                        for w in trace.update_weights[sample]
                    ]
                fh.write(json.dumps(record) + "\n")
                count += 1
    print(json.dumps({"records": count, "output": out_path}))
    return 0


_GRADCHECK_TOLERANCE = 1e-4


def cmd_gradcheck(args):
    if args.config:
        exp = _load_experiment(args)
        model = exp.model
        batch = exp.trace_batch(2)
    else:
        seed = 0 if args.seed is None else args.seed
        config = ModelConfig(
            arch="riglstm",
            input_dim=8,
            cell_dim=6,
            n_cells=3,
            n_views=3,
            n_active=2,
            n_input_sel=2,
            n_hidden_sel=1,
            out_slots=1,
            out_classes=4,
        )
        model = build_model(config, seed=seed)
        rng = np.random.default_rng(seed + 1)
        steps = 3
        from .tasks import TaskBatch

        inputs = rng.normal(size=(2, steps, config.input_dim))
        targets = np.full((2, steps, 1), -1, dtype=np.int64)
        targets[:, -1, 0] = rng.integers(0, config.out_classes, size=2)
        mask = np.zeros((2, steps, 1), dtype=bool)
        mask[:, -1, 0] = True
        batch = TaskBatch(inputs, targets, mask)
    if args.dry_run:
        print(json.dumps({"params": model.param_count(), "sample": 40}))
        return 0
    max_err, worst = training.gradcheck_model(model, batch, sample=40)
    status = "ok" if max_err < _GRADCHECK_TOLERANCE else "FAIL"
    print(
        json.dumps(
            {
                "status": status,
                "max_rel_err": max_err,
                "worst_param": worst[0],
                "worst_index": worst[1],
            }
        )
    )
    return 0 if status == "ok" else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rigseq",
        description="Train and inspect selective multi-cell recurrent units.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    specs = (
        ("train", cmd_train, True),
        ("eval", cmd_eval, True),
        ("dump-activations", cmd_dump_activations, True),
        ("gradcheck", cmd_gradcheck, False),
    )
    for name, func, config_required in specs:
        p = sub.add_parser(name)
        p.add_argument("--config", required=config_required)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--dry-run", action="store_true")
        p.set_defaults(func=func)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
