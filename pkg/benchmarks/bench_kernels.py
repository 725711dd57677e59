"""Compare the numba kernels with the pure-numpy fallback.

Each mode runs in its own interpreter because the switch is read at import
time.  The compiled mode is warmed up once before timing, so the numbers
exclude compilation (and cache loading).

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKLOADS = {
    "integrate_full": "full system, n=4, beta=2, eps=0.01, t in [0, 2000]",
    "equilibrium_sweep": "refine + spectrum on a 20x20 (beta, epsilon) slice",
    "gillespie": "one SIRS run, N=10^4, n=4, beta=2, t in [0, 20]",
}


def _workload(name, quick):
    import numpy as np
    from pairsirs.bifurcation import sweep_slice
    from pairsirs.integrate import IntegrationConfig, integrate_system
    from pairsirs.model import Params
    from pairsirs.netsim import generate_regular_graph, gillespie_run

    if name == "integrate_full":
        p = Params(2.0, 1.0, 0.01, 4)
        y0 = np.array([0.9, 0.02, 3.2, 0.05, 0.001])
        cfg = IntegrationConfig(max_time=200.0 if quick else 2000.0, dense=False, chunk=4096,
                                max_step=0.5 / 3)
        return lambda: integrate_system("full", p, y0, cfg)
    if name == "equilibrium_sweep":
        res = (8, 8) if quick else (20, 20)
        return lambda: sweep_slice(("beta", "epsilon"), {"n": 4}, (0.0, 15.0), (1e-3, 0.25),
                                   res, refine=False)
    if name == "gillespie":
        N = 2000 if quick else 10_000
        g = generate_regular_graph(N, 4, 1)
        p = Params(2.0, 1.0, 0.0, 4)
        return lambda: gillespie_run(g, p, np.arange(N // 100), 20.0, 0.1, seed=7)
    raise KeyError(name)


def _child(repeat, quick):
    out = {}
    for name in WORKLOADS:
        fn = _workload(name, quick)
        fn()  # warm-up / compile
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        _child(args.repeat, args.quick)
        return
    results = {}
    for mode, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, PAIRSIRS_DISABLE_NUMBA=flag)
        cmd = [sys.executable, __file__, "--child", "--repeat", str(args.repeat)]
        if args.quick:
            cmd.append("--quick")
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results[mode] = json.loads(proc.stdout.strip().splitlines()[-1])
    print(f"{'workload':<20} {'numba [s]':>10} {'numpy [s]':>10} {'speed-up':>9}  description")
    for name, desc in WORKLOADS.items():
        a, b = results["numba"][name], results["numpy"][name]
        print(f"{name:<20} {a:>10.4f} {b:>10.4f} {b / a:>8.1f}x  {desc}")


if __name__ == "__main__":
    main()
