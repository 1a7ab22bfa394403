"""Time the compiled and numpy kernels on identical inputs.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Both
backends are checked for agreement before timing.
"""
import argparse
import timeit

import numpy as np

from cavitydetect.core import PAPER_PARAMS
from cavitydetect.kernels import get_backend


def config_inputs(rng, n_configs=20_000, mean_atoms=40):
    p = PAPER_PARAMS
    counts = rng.poisson(mean_atoms, n_configs)
    n = counts.sum()
    half = 4 * p.waist
    x, y = rng.uniform(-half, half, (2, n))
    z = rng.uniform(0, p.wavelength / 2, n)
    return (x, y, z, counts.astype(np.int64), p.waist, p.wavenumber)


def transit_inputs(rng, n_atoms=50_000, n_bins=20_000, bin_width=1.0):
    p = PAPER_PARAMS
    speed = 0.64  # m/s, i.e. um/us
    t_cross = rng.uniform(0, n_bins * bin_width, n_atoms)
    x = rng.uniform(-4 * p.waist, 4 * p.waist, n_atoms)
    z = rng.uniform(0, p.wavelength / 2, n_atoms)
    t_kill = np.full(n_atoms, np.inf)
    return (t_cross, x, z, t_kill, 0.5 * bin_width, bin_width, n_bins, speed, p.waist,
            p.wavenumber, 4 * p.waist)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    cases = {"neff_configs": config_inputs(rng), "neff_transits": transit_inputs(rng)}
    backends = {"python": get_backend("python")}
    try:
        backends["cython"] = get_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy backend only")
    print(f"{'kernel':<16}{'backend':<9}{'best ms':>10}{'speedup':>9}")
    for name, inputs in cases.items():
        ref = getattr(backends["python"], name)(*inputs)
        best = {}
        for label, mod in backends.items():
            fn = getattr(mod, name)
            np.testing.assert_allclose(np.asarray(fn(*inputs)), ref, rtol=1e-10, atol=1e-12)
            best[label] = min(timeit.repeat(lambda: fn(*inputs), number=1, repeat=args.repeat))
        for label, t in best.items():
            print(f"{name:<16}{label:<9}{1e3 * t:>10.2f}{best['python'] / t:>9.1f}")


if __name__ == "__main__":
    main()
