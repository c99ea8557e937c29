"""Timing comparison of the compiled and pure-numpy recurrence kernels.

Runs the full sequence forward+backward pass (the training hot path) at a few
representative sizes and reports per-frame cost and speedup. Usage:

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from distilkit import kernels, layers


def make_params(rng, hidden, input_dim):
    mats = []
    for name in layers.LSTM_MATRIX_NAMES:
        shape = (hidden, input_dim) if name.startswith("w_x") else (hidden, hidden)
        mats.append(0.3 * rng.standard_normal(shape))
    return layers.LstmParams.from_matrices(mats)


def bench_case(name, hidden, input_dim, T, utterances, repeats):
    rng = np.random.default_rng(0)
    p = make_params(rng, hidden, input_dim)
    seqs = [rng.standard_normal((T, input_dim)) for _ in range(utterances)]
    grads = [rng.standard_normal((T, hidden)) for _ in range(utterances)]

    results = {}
    for backend in kernels.available_kernels():
        kernels.set_kernel(backend)
        # warm up once, then time
        h, cache = layers.lstm_sequence_forward(p, seqs[0])
        layers.lstm_sequence_backward(p, cache, grads[0])
        best = float("inf")
        for _ in range(repeats):
            start = time.perf_counter()
            for xs, g in zip(seqs, grads):
                _, cache = layers.lstm_sequence_forward(p, xs)
                layers.lstm_sequence_backward(p, cache, g)
            best = min(best, time.perf_counter() - start)
        results[backend] = best

    frames = T * utterances
    line = f"{name:<28}"
    for backend in sorted(results):
        line += f"  {backend}: {1e6 * results[backend] / frames:7.2f} us/frame"
    if {"python", "compiled"} <= results.keys():
        line += f"  speedup: {results['python'] / results['compiled']:.1f}x"
    print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"available kernels: {kernels.available_kernels()}")
    bench_case("teacher-size H=32 in=64 T=60", 32, 64, 60, 40, args.repeats)
    bench_case("small H=8 in=16 T=40", 8, 16, 40, 40, args.repeats)
    bench_case("wide H=128 in=128 T=100", 128, 128, 100, 8, args.repeats)
    kernels.set_kernel("compiled" if "compiled" in kernels.available_kernels() else "python")


if __name__ == "__main__":
    main()
