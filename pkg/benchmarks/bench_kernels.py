"""Compare the numba kernels with their numpy fallbacks.

Each kernel runs on the same inputs through both paths; outputs are checked
for agreement before timings are reported. The first numba call (JIT
compilation or cache load) is excluded from the timings.

    python benchmarks/bench_kernels.py [--repeat 5] [--blocks 20000]
"""

import argparse
import time

import numpy as np

from synplan import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def make_inputs(n_blocks, dim, n_rows, rng):
    lengths = rng.integers(5, 40, n_rows)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    values = rng.integers(-(2**40), 2**40, offsets[-1]).astype(np.int64)
    bits = rng.random((n_blocks, 2048)) < 0.05
    packed = np.packbits(bits, axis=1, bitorder="little").view("<u8")
    query = packed[0].copy()
    matrix = (rng.random((n_blocks, dim)) < 0.1).astype(np.float64)
    norms = np.sqrt((matrix * matrix).sum(axis=1))
    q = (rng.random(dim) < 0.1).astype(np.float64)
    return values, offsets, packed, query, matrix, norms, q


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--blocks", type=int, default=20000)
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--rows", type=int, default=5000, help="rows for the hashing kernel")
    args = ap.parse_args()

    if not _kernels.HAVE_NUMBA:
        print("numba path unavailable (not installed or SYNPLAN_DISABLE_NUMBA set); numpy timings only")

    rng = np.random.default_rng(0)
    values, offsets, packed, query, matrix, norms, q = make_inputs(args.blocks, args.dim, args.rows, rng)
    scores = _kernels.cosine_scores_numpy(matrix, norms, q)
    cand = np.arange(args.blocks, dtype=np.int64)

    cases = [
        ("fnv1a_rows", lambda: _kernels.fnv1a_rows_numpy(values, offsets),
         lambda: _kernels._fnv1a_rows_nb(values, offsets), np.array_equal),
        ("tanimoto_many", lambda: _kernels.tanimoto_many_numpy(query, packed),
         lambda: _kernels._tanimoto_many_nb(query, packed), np.array_equal),
        ("cosine_scores", lambda: _kernels.cosine_scores_numpy(matrix, norms, q),
         lambda: _kernels._cosine_scores_nb(matrix, norms, q), lambda a, b: np.allclose(a, b, rtol=0, atol=1e-12)),
        ("topk_desc", lambda: _kernels.topk_desc_numpy(scores, cand, 10),
         lambda: _kernels._topk_desc_nb(scores, cand, 10), np.array_equal),
    ]

    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}  agree")
    for name, f_np, f_nb, same in cases:
        t_np = best_of(f_np, args.repeat)
        if _kernels.HAVE_NUMBA:
            ref = f_np()
            out = f_nb()  # warm-up / compile
            t_nb = best_of(f_nb, args.repeat)
            print(f"{name:<16}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x  {same(ref, out)}")
        else:
            print(f"{name:<16}{t_np * 1e3:>12.2f}{'-':>12}{'-':>10}  -")


if __name__ == "__main__":
    main()
