"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--nodes 2000] [--repeat 20]

Prints one line per kernel with the best time of each backend and the speed-up, and
checks that both backends agree before timing anything.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from apriori_diffusion.kernels import backends


def _c(x):
    return np.ascontiguousarray(x, dtype=float)


def integrand_case(rng, nodes, n=2, d=2, modes=12):
    t = np.linspace(-30, 30, nodes)
    u = rng.uniform(-3, 3, (nodes, n))
    qd = rng.normal(size=(nodes, n))
    qdd = rng.normal(size=(nodes, n))
    K = rng.integers(-2, 3, (modes, n)).astype(float)
    Lm = rng.integers(-2, 3, (modes, d)).astype(float)
    LW = rng.normal(size=(modes, d))
    mvec = rng.integers(-1, 2, modes).astype(float)
    theta0 = rng.uniform(0, 2 * np.pi, modes)
    nu = rng.normal(size=modes)
    amp = rng.normal(size=modes)
    return tuple(_c(x) for x in (t, u, qd, qdd, K, theta0, nu, amp, Lm, LW, mvec)) + (True,)


def gradients_case(rng, n=2, d=2, modes=12):
    q = rng.uniform(-3, 3, n)
    phi = rng.uniform(0, 6, d)
    K = rng.integers(-2, 3, (modes, n)).astype(float)
    Lm = rng.integers(-2, 3, (modes, d)).astype(float)
    mvec = rng.integers(-1, 2, modes).astype(float)
    amp = rng.normal(size=modes)
    chi = rng.uniform(0, 6, modes)
    return (_c(q), _c(phi), 0.7, _c(K), _c(Lm), _c(mvec), _c(amp), _c(chi))


def fourier_case(rng, n=3, J=6):
    q = rng.uniform(-3, 3, n)
    harm = np.tile(np.arange(J, dtype=float), (n, 1))
    return (_c(q), _c(harm), _c(rng.normal(size=(n, J))), _c(rng.normal(size=(n, J))))


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    impls = backends()
    if "compiled" not in impls:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(args.seed)
    cases = {
        "melnikov_integrand": integrand_case(rng, args.nodes),
        "h1_gradients": gradients_case(rng),
        "fourier_derivative": fourier_case(rng),
    }
    print(f"{'kernel':<22}" + "".join(f"{name:>14}" for name in impls) + f"{'speed-up':>12}")
    for kernel, case in cases.items():
        results = {name: getattr(mod, kernel)(*case) for name, mod in impls.items()}
        ref = results["python"]
        for name, res in results.items():
            if not _agree(ref, res):
                raise SystemExit(f"{kernel}: backend {name} disagrees with the numpy version")
        times = {}
        for name, mod in impls.items():
            fn = getattr(mod, kernel)
            number = 1 if kernel == "melnikov_integrand" else 200
            best = min(timeit.repeat(lambda: fn(*case), number=number, repeat=args.repeat))
            times[name] = best / number
        ratio = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{kernel:<22}" + "".join(f"{times[n] * 1e6:>11.1f} us" for n in impls) + f"{ratio:>11.1f}x")


if __name__ == "__main__":
    main()
