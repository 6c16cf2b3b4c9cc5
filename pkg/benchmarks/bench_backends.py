"""Timing comparison between the compiled kernel backend and the plain
numpy fallback.

Runs each kernel on identical inputs under both backends and reports
the best-of-N wall time plus the speedup of compiled over numpy. Also
times one full tracked training step of the selective multi-cell unit
end to end.

Usage:
    python3 benchmarks/bench_backends.py [--batch 64] [--dim 128] [--repeats 30]
"""

import argparse
import time

import numpy as np

from rigseq import kernels, tasks, training
from rigseq.recurrent import ModelConfig, build_model


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def kernel_cases(batch, dim, rng):
    x = rng.normal(size=(batch, dim))
    z = rng.normal(size=(batch, 4 * dim))
    c = rng.normal(size=(batch, dim))
    _, _, saved = kernels.lstm_point_fwd(z, c)
    dh = rng.normal(size=(batch, dim))
    dc = rng.normal(size=(batch, dim))
    scores = rng.normal(size=(batch, dim))
    p = rng.normal(size=(batch, dim))
    g = rng.normal(size=(batch, dim))
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    return {
        "sigmoid": lambda: kernels.sigmoid(x),
        "tanh": lambda: kernels.tanh(x),
        "softmax_rows": lambda: kernels.softmax_rows(x),
        "lstm_point_fwd": lambda: kernels.lstm_point_fwd(z, c),
        "lstm_point_bwd": lambda: kernels.lstm_point_bwd(saved, c, dh, dc),
        "topk_rows": lambda: kernels.topk_rows(scores, dim // 4),
        "adam_update": lambda: kernels.adam_update(
            p, g, m, v, 1, 1e-4, 0.9, 0.999, 1e-8
        ),
    }


def train_step_case(batch):
    config = ModelConfig(
        arch="riglstm", input_dim=12, cell_dim=32, n_cells=6, n_views=6,
        n_active=4, n_input_sel=4, n_hidden_sel=4, out_slots=1, out_classes=10,
    )
    model = build_model(config, seed=0)
    data = tasks.gen_copy_batch(np.random.default_rng(0), batch, 1, 10, 20)
    opt = training.Adam(model.params, lr=1e-4)

    def step():
        result = training.run_batch(model, data, tracked=True)
        result.tape.backward(result.loss)
        grads = {name: result.bound[name].grad for name in model.params}
        training.clip_gradients(grads, 1.0)
        opt.step(grads)

    return step


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"available backends: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled backend not built; timing numpy only")

    rng = np.random.default_rng(0)
    names = list(kernel_cases(args.batch, args.dim, rng)) + ["train_step(32)"]
    times = {name: {} for name in names}
    for backend in backends:
        previous = kernels.use_backend(backend)
        try:
            cases = kernel_cases(args.batch, args.dim, np.random.default_rng(0))
            for name, fn in cases.items():
                fn()  # warm up
                times[name][backend] = best_of(fn, args.repeats)
            step = train_step_case(32)
            step()
            times["train_step(32)"][backend] = best_of(
                step, max(3, args.repeats // 10)
            )
        finally:
            kernels.use_backend(previous)

    width = max(len(n) for n in names)
    header = f"{'kernel':<{width}}  " + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name in names:
        row = f"{name:<{width}}  "
        for backend in backends:
            row += f"{times[name][backend] * 1e6:>12.1f}us"
        if len(backends) == 2:
            ratio = times[name]["numpy"] / times[name]["compiled"]
            row += f"{ratio:>9.2f}x"
        print(row)
    if len(backends) == 2:
        print("speedup > 1 means the compiled backend is faster")


if __name__ == "__main__":
    main()
