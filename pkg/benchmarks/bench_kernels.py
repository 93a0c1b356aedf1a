"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]

Reports the best-of-R wall time per call and checks that both backends agree.
"""
import argparse
import timeit

import numpy as np

from mestlab import kernels


def _loss_case(name, fn, params):
    def run(mod, x):
        out = [np.empty_like(x) for _ in range(4)]
        getattr(mod, fn)(x, *params, *out)
        return out
    return name, run


CASES = [
    _loss_case("square", "square_eval", ()),
    _loss_case("smoothed_huber", "smoothed_huber_eval", (1.345, 0.1, 0.05)),
    _loss_case("pseudo_l1", "pseudo_l1_eval", (0.1, 0.05)),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    mods = kernels.backends()
    rng = np.random.default_rng(0)
    x = rng.standard_t(3, args.size)
    a = np.sort(rng.standard_normal(args.size // 10))
    b = np.sort(rng.standard_normal(args.size // 10) + 0.1)

    print(f"active backend: {kernels.BACKEND}; available: {', '.join(mods)}")
    print(f"{'kernel':<16}" + "".join(f"{m:>14}" for m in mods) + "   speedup")
    cases = list(CASES) + [("ks_sup", lambda mod, _: mod.sup_distance_sorted(a, b))]
    for name, run in cases:
        times, outs = [], []
        for mod in mods.values():
            outs.append(run(mod, x))
            times.append(min(timeit.repeat(lambda: run(mod, x), number=1, repeat=args.repeat)))
        ref = outs[0]
        for o in outs[1:]:
            np.testing.assert_allclose(np.asarray(o, dtype=float), np.asarray(ref, dtype=float), rtol=1e-12)
        speed = f"{times[0] / times[-1]:8.2f}x" if len(times) > 1 else "       -"
        print(f"{name:<16}" + "".join(f"{t * 1e3:12.3f}ms" for t in times) + "  " + speed)


if __name__ == "__main__":
    main()
