"""Training stack: Adam, global-norm clipping, batch evaluation, and an
epoch loop with early stopping on validation loss.

Losses are mean cross-entropy over every scored slot in a batch.
run_batch has two modes: tracked builds one tape across the whole
sequence for backprop through time; untracked steps through fresh
single-step tapes (carrying state values across), so evaluation memory
stays flat in sequence length.
"""

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .recurrent.models import UnitState


class Adam:
    """Adam over a name -> array parameter dict, updating in place."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ad.ShapeError(
                    f"adam: gradient for {name} has shape {g.shape}, "
                    f"parameter has {p.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient for {name} at optimizer step {self.t}"
                )
            kernels.adam_update(
                p, g, self.m[name], self.v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )


def clip_gradients(grads, max_norm):
    """Scale all gradients in place so their global L2 norm is at most
    max_norm (non-positive max_norm disables). Returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def masked_nll_np(logits, targets, mask):
    """Plain numpy twin of the tape loss: (nll_sum, correct, count)."""
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return 0.0, 0, 0
    safe_t = np.where(mask, targets, 0)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = log_z - shifted[np.arange(logits.shape[0]), safe_t]
    correct = int(((logits.argmax(axis=1) == targets) & mask).sum())
    return float((nll * mask).sum()), correct, count


@dataclass
class BatchResult:
    loss_value: float
    correct: int
    count: int
    loss: object = None       # scalar Tensor (tracked mode only)
    tape: object = None
    bound: dict = None
    traces: list = None


def run_batch(model, batch, rng=None, tracked=True, collect=False):
    """Run a full batch; returns a BatchResult.

    Tracked mode records one tape over the whole sequence and returns
    the mean-loss tensor ready for backward. Untracked mode carries
    state values across fresh per-step tapes and, with collect=True,
    returns the per-step selection traces.
    """
    batch_size, total_steps = batch.inputs.shape[0], batch.inputs.shape[1]
    slots = batch.targets.shape[2]
    nll_sum = 0.0
    correct = 0
    count = 0
    if tracked:
        tape = ad.Tape()
        bound = model.bind(tape)
        state = model.init_state(tape, batch_size)
        loss_sum = None
        for t in range(total_steps):
            x = model.input_tensor(tape, bound, batch.inputs[:, t])
            state, _ = model.step(bound, x, state, rng=rng)
            if not batch.mask[:, t].any():
                continue
            logits = model.readout(bound, state)
            classes = logits.shape[1] // slots
            flat = ad.reshape(logits, batch_size * slots, classes)
            tgt = batch.targets[:, t].reshape(-1)
            msk = batch.mask[:, t].reshape(-1)
            piece = ad.masked_cross_entropy(flat, tgt, msk)
            loss_sum = piece if loss_sum is None else ad.add(loss_sum, piece)
            nll, step_correct, step_count = masked_nll_np(flat.values, tgt, msk)
            nll_sum += nll
            correct += step_correct
            count += step_count
        if count == 0:
            raise ValueError("batch has no scored slots")
        loss = ad.mul(loss_sum, 1.0 / count)
        return BatchResult(nll_sum / count, correct, count, loss, tape, bound)

    carry = None
    traces = [] if collect else None
    for t in range(total_steps):
        tape = ad.Tape()
        bound = model.bind(tape)
        if carry is None:
            state = model.init_state(tape, batch_size)
        else:
            state = UnitState(
                [tape.leaf(h) for h in carry[0]], [tape.leaf(c) for c in carry[1]]
            )
        x = model.input_tensor(tape, bound, batch.inputs[:, t])
        state, trace = model.step(bound, x, state, rng=rng, collect=collect)
        if collect:
            traces.append(trace)
        carry = ([h.values for h in state.hs], [c.values for c in state.cs])
        if not batch.mask[:, t].any():
            continue
        logits = model.readout(bound, state)
        classes = logits.shape[1] // slots
        flat = logits.values.reshape(batch_size * slots, classes)
        nll, step_correct, step_count = masked_nll_np(
            flat, batch.targets[:, t].reshape(-1), batch.mask[:, t].reshape(-1)
        )
        nll_sum += nll
        correct += step_correct
        count += step_count
    if count == 0:
        raise ValueError("batch has no scored slots")
    return BatchResult(nll_sum / count, correct, count, traces=traces)


def evaluate(model, batches, seed=0):
    """Mean loss and accuracy over fixed batches (untracked)."""
    rng = np.random.default_rng(seed)
    nll = 0.0
    correct = 0
    count = 0
    for batch in batches:
        result = run_batch(model, batch, rng=rng, tracked=False)
        nll += result.loss_value * result.count
        correct += result.correct
        count += result.count
    if count == 0:
        raise ValueError("evaluation set has no scored slots")
    return nll / count, correct / count


@dataclass
class EvalCondition:
    name: str
    batches: list


@dataclass
class TrainSettings:
    epochs: int = 10
    steps_per_epoch: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    patience: int = 5
    seed: int = 0
    eval_seed: int = 10_000


@dataclass
class TrainReport:
    steps: int
    epochs_run: int
    best_val_loss: float
    final: dict
    param_count: int
    wall_seconds: float

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _metric_rows_to_csv(rows, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("step,condition,accuracy,loss\n")
        for step, name, acc, loss in rows:
            fh.write(f"{step},{name},{acc:.10g},{loss:.10g}\n")


def gradcheck_model(model, batch, eps=1e-5, sample=None, seed=0, rng_seed=123):
    """Finite-difference check of every model parameter on one batch.

    The same step rng seed is replayed on every probe so random
    selection modes stay fixed while parameters are perturbed. Returns
    (max_rel_err, worst) from finite_diff_check.
    """

    def loss_fn():
        result = run_batch(
            model, batch, rng=np.random.default_rng(rng_seed), tracked=True
        )
        return result.loss.values[0, 0]

    result = run_batch(model, batch, rng=np.random.default_rng(rng_seed), tracked=True)
    result.tape.backward(result.loss)
    grads = {name: result.bound[name].grad for name in model.params}
    return ad.finite_diff_check(
        loss_fn, model.params, grads, eps=eps, sample=sample, seed=seed
    )


def train(model, sample_batch, val, evals, settings, metrics_path=None,
          progress=None):
    """Train with Adam and early stopping; returns a TrainReport.

    sample_batch(rng, batch_size) draws a training batch; val and each
    entry of evals are EvalConditions. Validation runs every epoch and
    the parameters with the best validation loss are restored at the
    end; rows of (step, condition, accuracy, loss) go to metrics_path
    as CSV. Wall-clock time stays out of the CSV so identical runs
    produce identical bytes. progress, if given, is called with each
    metric row as it is recorded.
    """
    start = time.monotonic()
    opt = Adam(model.params, lr=settings.lr, beta1=settings.beta1,
               beta2=settings.beta2, eps=settings.eps)
    rng = np.random.default_rng(settings.seed)
    rows = []
    conditions = [val] + list(evals)

    def eval_all(step):
        for cond in conditions:
            loss, acc = evaluate(model, cond.batches, seed=settings.eval_seed)
            rows.append((step, cond.name, acc, loss))
            if progress is not None:
                progress(step, cond.name, acc, loss)
            if cond is val:
                val_loss = loss
        return val_loss

    best_val = eval_all(0)
    best_params = {k: v.copy() for k, v in model.params.items()}
    bad_epochs = 0
    step = 0
    epochs_run = 0
    for _ in range(settings.epochs):
        for _ in range(settings.steps_per_epoch):
            batch = sample_batch(rng, settings.batch_size)
            result = run_batch(model, batch, rng=rng, tracked=True)
            if not np.isfinite(result.loss_value):
                raise FloatingPointError(
                    f"training diverged at step {step + 1}: "
                    f"loss={result.loss_value}"
                )
            result.tape.backward(result.loss)
            grads = {name: result.bound[name].grad for name in model.params}
            clip_gradients(grads, settings.clip_norm)
            opt.step(grads)
            step += 1
        epochs_run += 1
        val_loss = eval_all(step)
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in model.params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= settings.patience:
                break
    for name, arr in model.params.items():
        arr[...] = best_params[name]
    final = {}
    for cond in conditions:
        loss, acc = evaluate(model, cond.batches, seed=settings.eval_seed)
        rows.append((step, f"final/{cond.name}", acc, loss))
        if progress is not None:
            progress(step, f"final/{cond.name}", acc, loss)
        final[cond.name] = {"loss": loss, "accuracy": acc}
    if metrics_path is not None:
        _metric_rows_to_csv(rows, metrics_path)
    return TrainReport(
        steps=step,
        epochs_run=epochs_run,
        best_val_loss=best_val,
        final=final,
        param_count=model.param_count(),
        wall_seconds=time.monotonic() - start,
    )
