"""Compare the compiled and numpy propagation kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 21000]

The batch size defaults to one GRAPE gradient of the brain/muscle preset
(2 species x 21 offsets x 500 steps).  Each backend is also checked
against the other on the same inputs.
"""
import argparse
import time

import numpy as np

from spinctl import kernels


def random_generators(rng, m):
    G = np.zeros((m, 4, 4))
    G[:, 0, 0] = G[:, 1, 1] = -rng.uniform(0, 0.1, m)
    g = rng.uniform(0, 0.05, m)
    G[:, 2, 2], G[:, 2, 3] = -g, g
    w, ux, uy = rng.normal(0, 1.0, (3, m))
    G[:, 0, 1], G[:, 1, 0] = -w, w
    G[:, 0, 2], G[:, 2, 0] = uy, -uy
    G[:, 1, 2], G[:, 2, 1] = -ux, ux
    E = np.zeros((m, 2, 4, 4))
    E[:, 0, 1, 2], E[:, 0, 2, 1] = -1.0, 1.0
    E[:, 1, 0, 2], E[:, 1, 2, 0] = 1.0, -1.0
    return G, E


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=21000)
    ap.add_argument("--steps", type=int, default=500)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    G, E = random_generators(rng, args.batch)
    b = max(1, args.batch // args.steps)
    n = args.steps
    x0 = np.tile([0.0, 0.0, 1.0], (b, 1))
    L0 = rng.normal(size=(b, 3))

    names = kernels.available_backends()
    results = {}
    print(f"batch {args.batch} generators, sweeps over {b} x {n} steps, best of {args.repeat}")
    print(f"{'kernel':<22}" + "".join(f"{nm:>12}" for nm in names))
    rows = {}
    for nm in names:
        k = kernels.get_backend(nm)
        P = k.expm_affine(G[: b * n]).reshape(b, n, 4, 4)
        cases = {
            "expm_affine": lambda: k.expm_affine(G),
            "expm_affine_frechet": lambda: k.expm_affine_frechet(G, E),
            "forward_sweep": lambda: k.forward_sweep(P, x0),
            "backward_sweep": lambda: k.backward_sweep(P, L0),
        }
        for case, fn in cases.items():
            t, out = best_of(fn, args.repeat)
            rows.setdefault(case, {})[nm] = t
            results[(nm, case)] = out
    for case, per in rows.items():
        print(f"{case:<22}" + "".join(f"{per[nm] * 1e3:>10.2f}ms" for nm in names))
    if len(names) == 2:
        print("speed-up (python / c): " + ", ".join(
            f"{case} {per['python'] / per['c']:.1f}x" for case, per in rows.items()))
        for case in rows:
            a, c = results[("python", case)], results[("c", case)]
            a = a if isinstance(a, tuple) else (a,)
            c = c if isinstance(c, tuple) else (c,)
            diff = max(float(np.max(np.abs(u - v))) for u, v in zip(a, c))
            print(f"max |python - c| for {case}: {diff:.2e}")
    else:
        print("compiled kernels not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
