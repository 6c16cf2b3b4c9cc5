"""Experiment configuration.

Configs live as INI files with four sections (task, model, training,
output); every key has a typed default, unknown keys are rejected, and
errors name the offending section.key. assemble() turns a config into
a ready-to-run experiment: the model, a training batch sampler, fixed
validation/evaluation sets, and trainer settings.
"""

import configparser
import copy
from dataclasses import dataclass

import numpy as np

from . import tasks as tasklib
from .recurrent.models import ModelConfig, build_model
from .training import EvalCondition, TrainSettings


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int_list(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    parts = [p.strip() for p in str(text).split(",")]
    values = [int(p) for p in parts if p]
    if not values:
        raise ValueError(f"expected a comma-separated integer list, got {text!r}")
    return values


SCHEMA = {
    "task": {
        "kind": (str, "copy"),
        "digits_per_step": (int, 1),
        "seq_len": (int, 10),
        "blanks": (int, 50),
        "eval_blanks": (_parse_int_list, [100, 200, 400]),
        "eval_batches": (int, 2),
        "eval_batch_size": (int, 64),
        "data_dir": (str, "data"),
        "train_images": (int, 5000),
        "test_images": (int, 1000),
        "image_side": (int, 14),
        "eval_sides": (_parse_int_list, [19]),
        "data_seed": (int, 0),
    },
    "model": {
        "arch": (str, "riglstm"),
        "cell_dim": (int, 32),
        "n_cells": (int, 6),
        "n_views": (int, 6),
        "n_active": (int, 4),
        "n_input_sel": (int, 4),
        "n_hidden_sel": (int, 4),
        "cell_mode": (str, "normal"),
        "input_mode": (str, "normal"),
        "hidden_mode": (str, "normal"),
        "soft_update": (_parse_bool, True),
        "input_transform": (_parse_bool, True),
        "shared_query": (_parse_bool, False),
        "forget_bias": (float, 1.0),
        "recurrent_init": (str, "uniform"),
        "embed_dim": (int, 64),
        "param_seed": (int, 0),
    },
    "training": {
        "batch_size": (int, 64),
        "lr": (float, 0.0001),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "epochs": (int, 10),
        "steps_per_epoch": (int, 100),
        "clip_norm": (float, 1.0),
        "patience": (int, 5),
        "seed": (int, 0),
        "val_batches": (int, 2),
    },
    "output": {
        "dir": (str, "runs/run"),
    },
}


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


class ExperimentConfig:
    """Typed view over the INI schema; values[section][key] holds
    parsed python values."""

    def __init__(self, overrides=None):
        self.values = {
            section: {key: copy.copy(default) for key, (_, default) in keys.items()}
            for section, keys in SCHEMA.items()
        }
        for section, keys in (overrides or {}).items():
            for key, value in keys.items():
                self.set(section, key, value)

    def get(self, section, key):
        return self.values[section][key]

    def set(self, section, key, value):
        if section not in SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ValueError(f"unknown config key {section}.{key}")
        parse, default = SCHEMA[section][key]
        if isinstance(value, str):
            try:
                value = parse(value)
            except ValueError as exc:
                raise ValueError(f"{section}.{key}: {exc}") from None
        elif isinstance(default, list):
            value = _parse_int_list(value)
        elif isinstance(default, bool):
            value = bool(value)
        else:
            value = type(default)(value)
        self.values[section][key] = value

    @classmethod
    def from_ini(cls, path):
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ValueError(f"cannot read config file {path}")
        cfg = cls()
        for section in parser.sections():
            if section not in SCHEMA:
                raise ValueError(f"unknown config section [{section}] in {path}")
            for key, raw in parser.items(section):
                cfg.set(section, key, raw)
        return cfg

    def to_ini(self, path):
        with open(path, "w", newline="\n") as fh:
            for si, (section, keys) in enumerate(SCHEMA.items()):
                if si:
                    fh.write("\n")
                fh.write(f"[{section}]\n")
                for key in keys:
                    fh.write(f"{key} = {_format_value(self.values[section][key])}\n")


@dataclass
class Experiment:
    config: ExperimentConfig
    model: object
    sample_batch: object
    val: EvalCondition
    evals: list
    settings: TrainSettings
    out_dir: str
    trace_batch: object
    summary: dict


def _model_config(cfg, input_dim, out_slots, out_classes, embed_vocab):
    m = cfg.values["model"]
    arch = m["arch"]
    common = dict(
        arch=arch,
        input_dim=input_dim,
        cell_dim=m["cell_dim"],
        forget_bias=m["forget_bias"],
        recurrent_init=m["recurrent_init"],
        out_slots=out_slots,
        out_classes=out_classes,
        embed_vocab=embed_vocab,
    )
    if arch == "lstm":
        return ModelConfig(**common)
    if arch == "gridlstm":
        return ModelConfig(n_cells=m["n_cells"], **common)
    return ModelConfig(
        n_cells=m["n_cells"],
        n_views=m["n_views"],
        n_active=m["n_active"],
        n_input_sel=m["n_input_sel"],
        n_hidden_sel=m["n_hidden_sel"],
        cell_mode=m["cell_mode"],
        input_mode=m["input_mode"],
        hidden_mode=m["hidden_mode"],
        soft_update=m["soft_update"],
        input_transform=m["input_transform"],
        shared_query=m["shared_query"],
        **common,
    )


def assemble(cfg, seed=None, out_dir=None):
    """Build the model, task samplers, and settings from a config.

    seed overrides training.seed; out_dir overrides output.dir. All
    evaluation sets are constructed deterministically from the seed, so
    identical configs reproduce identical runs.
    """
    t = cfg.values["task"]
    tr = cfg.values["training"]
    run_seed = tr["seed"] if seed is None else int(seed)
    settings = TrainSettings(
        epochs=tr["epochs"],
        steps_per_epoch=tr["steps_per_epoch"],
        batch_size=tr["batch_size"],
        lr=tr["lr"],
        beta1=tr["beta1"],
        beta2=tr["beta2"],
        eps=tr["eps"],
        clip_norm=tr["clip_norm"],
        patience=tr["patience"],
        seed=run_seed,
    )
    kind = t["kind"]
    ebs = t["eval_batch_size"]
    if kind == "copy":
        base = tasklib.CopyTask(t["digits_per_step"], t["seq_len"], t["blanks"])
        val_rng = np.random.default_rng([run_seed, 101])
        val = EvalCondition(
            "val", [base.sample(val_rng, ebs) for _ in range(tr["val_batches"])]
        )
        evals = []
        for blanks in t["eval_blanks"]:
            rng = np.random.default_rng([run_seed, 202, blanks])
            task = base.with_blanks(blanks)
            evals.append(
                EvalCondition(
                    f"blanks{blanks}",
                    [task.sample(rng, ebs) for _ in range(t["eval_batches"])],
                )
            )
        model_cfg = _model_config(cfg, base.input_dim, base.out_slots, base.out_classes, 0)

        def sample_batch(rng, batch_size):
            return base.sample(rng, batch_size)

        def trace_batch(n):
            return base.sample(np.random.default_rng([run_seed, 303]), n)

    elif kind == "image":
        train_images, train_labels = tasklib.ensure_image_data(
            t["data_dir"], "train", t["train_images"], t["data_seed"]
        )
        test_images, test_labels = tasklib.ensure_image_data(
            t["data_dir"], "test", t["test_images"], t["data_seed"]
        )
        train_task = tasklib.ImageTask(train_images, train_labels, t["image_side"])
        val_task = tasklib.ImageTask(test_images, test_labels, t["image_side"])
        val = EvalCondition("val", val_task.ordered_batches(ebs))
        evals = []
        for side in t["eval_sides"]:
            task = tasklib.ImageTask(test_images, test_labels, side)
            evals.append(EvalCondition(f"side{side}", task.ordered_batches(ebs)))
        m = cfg.values["model"]
        model_cfg = _model_config(cfg, m["embed_dim"], 1, 10, 2)

        def sample_batch(rng, batch_size):
            return train_task.sample(rng, batch_size)

        def trace_batch(n):
            return tasklib.make_image_batch(
                val_task.sequences[:n], val_task.labels[:n]
            )

    else:
        raise ValueError(f"task.kind: expected 'copy' or 'image', got {kind!r}")

    model = build_model(model_cfg, seed=cfg.get("model", "param_seed"))
    run_dir = cfg.get("output", "dir") if out_dir is None else str(out_dir)
    summary = {
        "task": kind,
        "arch": model_cfg.arch,
        "input_dim": model_cfg.input_dim,
        "param_count": model.param_count(),
        "seed": run_seed,
        "epochs": settings.epochs,
        "steps_per_epoch": settings.steps_per_epoch,
        "conditions": [val.name] + [c.name for c in evals],
        "out_dir": run_dir,
    }
    return Experiment(
        cfg, model, sample_batch, val, evals, settings, run_dir, trace_batch, summary
    )
