"""Time the numba kernels against their pure-numpy twins.

Usage (after an editable install):

    python3 benchmarks/bench_kernels.py [--size 256] [--repeats 50]

Each kernel runs on identical inputs in the training dtype (float32); the
reported time is the best of ``--repeats`` calls after one untimed warmup
that also absorbs numba's JIT compilation.  The script then cross-checks the
two backends on fresh inputs: they agree to tolerance, not bitwise, because
libm's erf differs from scipy's in the last ulps and reduction order differs
between the loop and numpy's pairwise sums.  Exit status is nonzero if any
kernel disagrees beyond tolerance.
"""

import argparse
import sys
import timeit

import numpy as np

from tqnet import kernels


def make_cases(size, rng):
    """(name, builder) pairs; builder() returns a fresh argument tuple."""
    n, d, w, lb = size, 512, 24, 96
    idx = (np.arange(lb) + 7) % w  # wraps, so columns accumulate

    def norm(shape):
        return rng.normal(size=shape).astype(np.float32)

    return [
        ("gelu", lambda: (norm((n, d)),)),
        ("gelu_grad", lambda: (norm((n, d)),)),
        ("softmax_rows", lambda: (norm((n, n)),)),
        ("softmax_rows_grad",
         lambda: (kernels.numpy_backend["softmax_rows"](norm((n, n))),
                  norm((n, n)))),
        ("row_norm_stats", lambda: (norm((n, d)), 1e-5)),
        ("adam_update",
         lambda: (norm((d, d)), norm((d, d)),
                  np.zeros((d, d), np.float32), np.zeros((d, d), np.float32),
                  1e-3, 0.9, 0.999, 1e-8, 1)),
        ("scatter_add_cols",
         lambda: (np.zeros((n, w), np.float32), idx, norm((n, lb)))),
        ("mse_mae", lambda: (norm((n, d)), norm((n, d)))),
    ]


def copy_args(args):
    return tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)


def flatten_state(args, result):
    """Everything a kernel touched: outputs plus (possibly mutated) inputs."""
    parts = [np.ravel(a).astype(np.float64) for a in args
             if isinstance(a, np.ndarray)]
    if result is not None:
        outs = result if isinstance(result, tuple) else (result,)
        parts += [np.ravel(np.asarray(o)).astype(np.float64) for o in outs]
    return np.concatenate(parts)


def best_time(fn, args, repeats):
    fn(*copy_args(args))  # warmup / JIT
    work = copy_args(args)
    return min(timeit.repeat(lambda: fn(*work), number=1, repeat=repeats))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256,
                    help="leading dimension of the benchmark arrays")
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--tol", type=float, default=1e-5,
                    help="max absolute cross-backend disagreement (float32)")
    args = ap.parse_args(argv)

    if not kernels.HAS_NUMBA:
        print("numba is not importable; nothing to compare against.")
        return 1

    rng = np.random.default_rng(0)
    rows = []
    worst = ("", 0.0)
    for name, builder in make_cases(args.size, rng):
        shared = builder()
        np_fn = kernels.numpy_backend[name]
        nb_fn = kernels.numba_backend[name]

        a_np, a_nb = copy_args(shared), copy_args(shared)
        state_np = flatten_state(a_np, np_fn(*a_np))
        state_nb = flatten_state(a_nb, nb_fn(*a_nb))
        diff = float(np.abs(state_np - state_nb).max())
        if diff > worst[1]:
            worst = (name, diff)

        t_np = best_time(np_fn, shared, args.repeats)
        t_nb = best_time(nb_fn, shared, args.repeats)
        rows.append((name, t_np, t_nb, t_np / t_nb, diff))

    print(f"size={args.size}  repeats={args.repeats}  dtype=float32")
    print(f"{'kernel':<20}{'numpy':>12}{'numba':>12}{'speedup':>9}"
          f"{'max |diff|':>12}")
    for name, t_np, t_nb, speedup, diff in rows:
        print(f"{name:<20}{t_np * 1e6:>10.1f}us{t_nb * 1e6:>10.1f}us"
              f"{speedup:>8.2f}x{diff:>12.2e}")
    print(f"worst cross-backend disagreement: {worst[1]:.2e} ({worst[0]})")

    if worst[1] > args.tol:
        print(f"FAIL: backends disagree beyond {args.tol:g}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
