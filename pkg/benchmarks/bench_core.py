"""Compiled vs numpy batched Hermitian eigensolver.

Columns: the numpy fallback, the compiled Jacobi sweep at every rank, and the
compiled ``eigh_batch`` that switches to LAPACK above ``JACOBI_MAX_RANK``.

Run ``python benchmarks/bench_core.py``. Batches of small Hermitian matrices
are what the pointwise exp/log and metric updates feed to ``eigh_batch``.
"""

import argparse
import timeit

import numpy as np

from folhe import _core_py

try:
    from folhe import _core
except ImportError:
    _core = None


def random_hermitian(batch, r, rng):
    a = rng.standard_normal((batch, r, r)) + 1j * rng.standard_normal((batch, r, r))
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, nargs="+", default=[64, 4096, 65536])
    ap.add_argument("--rank", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("numpy", _core_py.eigh_batch)]
    if _core is not None:
        backends.append(("jacobi", _core.jacobi_eigh_batch))
        backends.append(("dispatch", _core.eigh_batch))
    else:
        print("compiled core not built; timing the numpy fallback only")
    print(f"{'batch':>7s} {'r':>2s} " + " ".join(f"{n:>12s}" for n, _ in backends)
          + "   max|dw|")
    for r in args.rank:
        for b in args.batch:
            a = random_hermitian(b, r, rng)
            times, vals = [], []
            for _, fn in backends:
                vals.append(fn(a)[0])
                times.append(min(timeit.repeat(lambda: fn(a), number=1, repeat=args.repeat)))
            dw = max(float(np.abs(v - vals[0]).max()) for v in vals)
            print(f"{b:7d} {r:2d} " + " ".join(f"{t * 1e3:10.3f}ms" for t in times)
                  + f"   {dw:.1e}")


if __name__ == "__main__":
    main()
