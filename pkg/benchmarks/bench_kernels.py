"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Reports the best-of-N wall time per call for a fused Adam step on a
784x100 weight matrix and for the forward-gradient moment accumulation of
a 784-100-10 network over a chunk of perturbation draws.
"""
import argparse
import timeit

import numpy as np

from fdfa import kernels
from fdfa.core import RngStream
from fdfa.network import MlpSpec, activate_prime, forward, kaiming_uniform_init, loss_and_error


def adam_case(size):
    rng = np.random.default_rng(0)
    p, g, m = rng.normal(size=size), rng.normal(size=size), rng.normal(size=size)
    v = rng.random(size)

    def run(impl):
        impl.adam_update(p, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001)
    return run


def moments_case(widths, mode, n_draws):
    net = kaiming_uniform_init(MlpSpec(widths), RngStream(0))
    x = RngStream(1).uniform(0.0, 1.0, widths[0])
    trace = forward(net, x)
    _, e = loss_and_error(trace.output, 3)
    L = net.depth
    wflat = np.concatenate([w.ravel() for w in net.weights])
    yflat = np.concatenate(trace.post[:L])
    sflat = np.concatenate([activate_prime(net.spec.activation(l), trace.pre[l - 1]) for l in range(1, L + 1)])
    width = sum(w.size for w in net.weights[:L - 1]) if mode == 0 else sum(widths[1:L])
    noise = RngStream(2).normal((n_draws, width))
    size = wflat.size
    shift = np.zeros(size)
    bufs = [np.zeros(size) for _ in range(4)]
    args = (mode, np.asarray(widths, dtype=np.int64), wflat, yflat, sflat, e, noise, False, shift, *bufs)

    def run(impl):
        impl.fg_moments(*args)
    return run


def best(fn, impl, repeat):
    return min(timeit.repeat(lambda: fn(impl), number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    cases = {
        "adam_update 78,400 params": adam_case(784 * 100),
        "fg_moments weight mode, 50 draws": moments_case((784, 100, 10), 0, 50),
        "fg_moments activity mode, 500 draws": moments_case((784, 100, 10), 1, 500),
    }
    python = kernels.implementation("python")
    try:
        compiled = kernels.implementation("compiled")
    except ImportError:
        compiled = None
        print("compiled extension not built; timing the fallback only")

    print(f"{'case':<40}{'python [ms]':>14}{'compiled [ms]':>16}{'speed-up':>10}")
    for name, fn in cases.items():
        t_py = best(fn, python, args.repeat)
        if compiled is None:
            print(f"{name:<40}{t_py * 1e3:>14.2f}")
            continue
        t_c = best(fn, compiled, args.repeat)
        print(f"{name:<40}{t_py * 1e3:>14.2f}{t_c * 1e3:>16.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
