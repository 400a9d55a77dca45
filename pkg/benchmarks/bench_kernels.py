"""Times the compiled gradient kernels against the plain numpy ones.

Runs both implementations on the shapes the simulator actually hits
(minibatch of 20, wide flat inputs, 10 classes, 100 hidden units), checks
they agree, and prints per-call time plus the speedup.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --batch 128 --repeats 5000
"""

import argparse
import time

import numpy as np

from fedbreg import _kernels_numpy as knp

try:
    from fedbreg import _kernels_numba as knb
except ImportError:
    knb = None


def time_call(fn, args, repeats):
    fn(*args)  # warmup; also triggers JIT compile for the numba path
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_one(name, fn_np, fn_nb, args, repeats):
    t_np = time_call(fn_np, args, repeats)
    if fn_nb is None:
        print(f"{name:10s} numpy {t_np * 1e6:9.2f} us/call   (numba unavailable)")
        return
    t_nb = time_call(fn_nb, args, repeats)
    diff = float(np.max(np.abs(fn_np(*args) - fn_nb(*args))))
    print(
        f"{name:10s} numpy {t_np * 1e6:9.2f} us/call   "
        f"numba {t_nb * 1e6:9.2f} us/call   "
        f"speedup {t_np / t_nb:5.2f}x   max|diff| {diff:.2e}"
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=20)
    parser.add_argument("--input-dim", type=int, default=784)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--hidden", type=int, default=100)
    parser.add_argument("--leaky-slope", type=float, default=0.01)
    parser.add_argument("--repeats", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    x = rng.random((args.batch, args.input_dim))
    y = rng.integers(0, args.classes, size=args.batch).astype(np.int64)

    d, c, h = args.input_dim, args.classes, args.hidden
    p_mclr = rng.normal(0, 0.05, size=d * c + c)
    p_dnn = rng.normal(0, 0.05, size=d * h + h + h * c + c)

    print(
        f"batch={args.batch} input_dim={d} classes={c} hidden={h} "
        f"repeats={args.repeats}"
    )
    bench_one(
        "mclr_grad",
        knp.mclr_grad,
        knb.mclr_grad if knb else None,
        (p_mclr, x, y, c),
        args.repeats,
    )
    bench_one(
        "dnn_grad",
        knp.dnn_grad,
        knb.dnn_grad if knb else None,
        (p_dnn, x, y, h, c, args.leaky_slope),
        args.repeats,
    )


if __name__ == "__main__":
    main()
