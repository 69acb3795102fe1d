"""Time the compiled kernels against their pure-Python twins.

    python3 benchmarks/bench_kernels.py [--tokens N] [--repeat R]

Both backends are called through the same arguments; the compiled path
includes the array conversion done by :mod:`orchestra.kernels`, so the
numbers reflect what the loss and standardization code actually pays.
"""

from __future__ import annotations

import argparse
import random
import timeit

from orchestra import _kernels_py, kernels


def inputs(n: int, seed: int = 0):
    rng = random.Random(seed)
    new = [rng.gauss(-1.0, 0.3) for _ in range(n)]
    old = [x + rng.gauss(0.0, 0.05) for x in new]
    ref = [x + rng.gauss(0.0, 0.1) for x in new]
    adv = [rng.gauss(0.0, 1.0) for _ in range(n)]
    groups = [rng.randrange(64) for _ in range(n)]
    return new, old, ref, adv, groups


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tokens", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        print("compiled extension not built; only the Python timings are meaningful")
    print(f"{'kernel':<20}{'tokens':>9}{'python ms':>12}{'compiled ms':>13}{'speedup':>9}")
    for n in args.tokens:
        new, old, ref, adv, groups = inputs(n)
        cases = {
            "clipped_terms": (
                lambda: _kernels_py.clipped_terms(new, old, ref, adv, 0.2),
                lambda: kernels.clipped_terms(new, old, ref, adv, 0.2),
            ),
            "standardize_groups": (
                lambda: _kernels_py.standardize_groups(adv, groups, 64, 1e-8),
                lambda: kernels.standardize_groups(adv, groups, 64, 1e-8),
            ),
        }
        for name, (py, fast) in cases.items():
            assert _close(py(), fast()), f"{name}: backends disagree"
            t_py, t_fast = best(py, args.repeat), best(fast, args.repeat)
            print(f"{name:<20}{n:>9}{t_py * 1e3:>12.2f}{t_fast * 1e3:>13.2f}{t_py / t_fast:>8.1f}x")
    return 0


def _close(a, b, tol: float = 1e-12) -> bool:
    flat_a = a if isinstance(a, list) else [x for part in a for x in part]
    flat_b = b if isinstance(b, list) else [x for part in b for x in part]
    return all(abs(x - y) <= tol * max(1.0, abs(x)) for x, y in zip(flat_a, flat_b))


if __name__ == "__main__":
    raise SystemExit(main())
