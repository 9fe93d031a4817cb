"""Compiled vs numpy kernels on the shapes the meter actually uses.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes: M=1000 particles of the 5-hidden-unit regression net on a batch of
10, the 10-hidden-unit classifier on a batch of 25, and the MMD kernel sums
of the generative setting (50 particle blocks of 250 samples in 2-D).
"""
import argparse
import timeit

import numpy as np

from forgetmeter import kernels


def cases(rng):
    def net(M, D, H, O, B):
        return (rng.normal(size=(M, H, D)), rng.normal(size=(M, H)), rng.normal(size=(M, O, H)),
                rng.normal(size=(M, O)), rng.normal(size=(M, B, D)), rng.normal(size=(M, B, O)))

    W1, b1, W2, b2, X, T = net(1000, 1, 5, 1, 10)
    yield "forward  regression M=1000", lambda k: k.mlp_forward(W1, b1, W2, b2, X)
    yield "grad     regression M=1000", lambda k: k.mlp_grad(W1, b1, W2, b2, X, T, None, kernels.MSE)
    C = net(1000, 2, 10, 2, 25)
    P = np.abs(C[5]) / np.abs(C[5]).sum(-1, keepdims=True)
    yield "grad     classifier M=1000", lambda k: k.mlp_grad(*C[:5], P, None, kernels.XENT)
    S, R = rng.normal(size=(50, 250, 2)), rng.normal(size=(1000, 2))
    yield "rbf      blocks 50x250 vs 1000", lambda k: k.rbf_block_sums(S, R, 0.5)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'kernel':<32}" + "".join(f"{name:>14}" for name in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)):
        times = {}
        for name, mod in backends.items():
            fn(mod)  # warm-up
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        row = f"{label:<32}" + "".join(f"{times[n] * 1e3:>11.2f} ms" for n in backends)
        if len(times) > 1:
            row += f"{times['python'] / times['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
