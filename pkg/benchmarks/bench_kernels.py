"""Time the compiled loop kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 200]

Sizes follow the full-size scenario (10 UE, 10 BS, 10x10 arrays) and a
36001-point linear pattern.  Both forms are called directly, so the result
does not depend on DTBEAM_DISABLE_NUMBA.
"""
import argparse
import timeit

import numpy as np

from dtbeam import kernels
from dtbeam._accel import HAVE_NUMBA
from dtbeam.env import MobilityParams, StreetGraph, random_positions


def cases(rng):
    n_ue, n_bs, n_t = 10, 10, 100
    H = (rng.normal(size=(n_ue, n_bs, n_t)) + 1j * rng.normal(size=(n_ue, n_bs, n_t))) * 1e-5
    F = rng.normal(size=(n_ue, n_t)) + 1j * rng.normal(size=(n_ue, n_t))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    serving = rng.integers(0, n_bs, n_ue)
    G = kernels._gain_matrix_numpy(H, serving, F)
    p = np.ones(n_ue)
    half = rng.uniform(1, 3, 5)
    u = np.linspace(0, np.pi / 2, 36001)

    g = StreetGraph.four_junction()
    state = random_positions(g, 1000, rng)
    mp = MobilityParams()
    walk_args = (state.street, state.s, state.heading, g.lengths, g.junc_street, g.junc_s,
                 g.junc_other, g.junc_other_s, mp.speed * mp.dt, mp.jitter,
                 rng.normal(size=1000), rng.uniform(size=1000))
    return {
        "gain_matrix (10 UE, 100 el.)": ("_gain_matrix", (H, serving, F)),
        "interference_sinr (10 UE)": ("_interference_sinr", (G, p, 1e-13)),
        "cos_series (36001 pts)": ("_cos_series", (half, u)),
        "walk_streets (1000 UE)": ("_walk_streets", walk_args),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {HAVE_NUMBA}")
    print(f"{'kernel':32s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for name, (stem, a) in cases(rng).items():
        loop = getattr(kernels, stem + "_loop")
        vec = getattr(kernels, stem + "_numpy")
        loop(*a)  # compile outside the timed region
        t_loop = min(timeit.repeat(lambda: loop(*a), number=args.repeat, repeat=3)) / args.repeat
        t_vec = min(timeit.repeat(lambda: vec(*a), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:32s} {t_loop * 1e6:10.1f} {t_vec * 1e6:10.1f} {t_vec / t_loop:8.2f}")


if __name__ == "__main__":
    main()
