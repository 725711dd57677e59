"""Command-line entry point: ``pairsirs {integrate,singular,hopf,netsim}``.

Settings resolve as command-line flags over the YAML config file (``--config``)
over built-in defaults.  A config file may hold the keys at top level or in
a section named after the command.  Exit codes: 0 success, 2 usage or
precondition error, 3 computation failure.
"""
import argparse
import logging
import os
import sys

import numpy as np
import yaml

from . import __version__, model
from .errors import (ConsistencyError, ConvergenceError, GraphGenerationError,
                     ModelDomainError, StiffnessError)
from .io import metadata, svg_plot, write_json
from .model import Params

log = logging.getLogger("pairsirs")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 2, 3
RUNTIME_ERRORS = (ConvergenceError, StiffnessError, GraphGenerationError, ConsistencyError)


class UsageError(Exception):
    pass


COMMON_DEFAULTS = {"beta": None, "gamma": 1.0, "epsilon": 0.0, "n": 4}

DEFAULTS = {
    "integrate": {"system": None, "out": None, "svg": None, "tmax": None,
                  "rtol": 1e-9, "atol": 1e-11, "max_step": None,
                  "S": None, "I": None, "SS": None, "SI": None, "II": None,
                  "components": None},
    "singular": {"S0": 0.9, "SS0": None, "mode": "general", "width": 1e-2, "samples": 21,
                 "tol": 1e-8, "max_iter": 200, "out_dir": None},
    "hopf": {"axes": "beta,epsilon", "x_range": None, "y_range": None, "resolution": [100, 100],
             "out_dir": None},
    "netsim": {"N": 10000, "replicas": 50, "seed": 0, "tmax": 20.0, "dt": 0.05,
               "initial_fraction": 0.01, "tolerance": 0.15, "records": False, "out_dir": None},
}

REQUIRED = {
    "integrate": ["system", "out", "tmax"],
    "singular": ["beta", "out_dir"],
    "hopf": ["x_range", "y_range", "out_dir"],
    "netsim": ["beta", "out_dir"],
}


def _add_params(sp, epsilon=True):
    sp.add_argument("--beta", type=float, help="infection rate per SI edge")
    sp.add_argument("--gamma", type=float, help="recovery rate (default 1)")
    if epsilon:
        sp.add_argument("--epsilon", "--eps", type=float, dest="epsilon",
                        help="waning rate (default 0)")
    sp.add_argument("--n", type=float, help="node degree (default 4)")


def build_parser():
    ap = argparse.ArgumentParser(prog="pairsirs", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pairsirs {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("integrate", help="integrate the full, layer or slow system")
    sp.add_argument("--config")
    sp.add_argument("--system", help="full | layer | slow")
    _add_params(sp)
    for name in ("S", "I", "SS", "SI", "II"):
        sp.add_argument(f"--{name}", type=float, help=f"initial {name}")
    sp.add_argument("--tmax", type=float, help="integration time (slow time for --system slow)")
    sp.add_argument("--rtol", type=float)
    sp.add_argument("--atol", type=float)
    sp.add_argument("--max-step", type=float, dest="max_step")
    sp.add_argument("--out", help="trajectory CSV path")
    sp.add_argument("--svg", help="optional SVG plot path")
    sp.add_argument("--components", help="comma-separated components to plot")

    sp = sub.add_parser("singular", help="singular-cycle search and interval test")
    sp.add_argument("--config")
    _add_params(sp, epsilon=False)
    sp.add_argument("--S0", type=float, help="starting S on the section (default 0.9)")
    sp.add_argument("--SS0", type=float, help="starting SS (default n*S0^2)")
    sp.add_argument("--mode", choices=["general", "parabola"])
    sp.add_argument("--width", type=float, help="J1 width in SS (default 1e-2)")
    sp.add_argument("--samples", type=int, help="J1 sample count (default 21)")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iter", type=int, dest="max_iter")
    sp.add_argument("--out-dir", dest="out_dir")

    sp = sub.add_parser("hopf", help="classify a parameter slice and locate Hopf points")
    sp.add_argument("--config")
    _add_params(sp)
    sp.add_argument("--axes", help="two of n,beta,epsilon (default beta,epsilon)")
    sp.add_argument("--x-range", type=float, nargs=2, dest="x_range")
    sp.add_argument("--y-range", type=float, nargs=2, dest="y_range")
    sp.add_argument("--resolution", type=int, nargs="+")
    sp.add_argument("--out-dir", dest="out_dir")

    sp = sub.add_parser("netsim", help="stochastic network simulations versus the pair ODE")
    sp.add_argument("--config")
    _add_params(sp)
    sp.add_argument("--N", type=int, help="number of nodes")
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tmax", type=float)
    sp.add_argument("--dt", type=float, help="sampling interval")
    sp.add_argument("--initial-fraction", type=float, dest="initial_fraction")
    sp.add_argument("--tolerance", type=float, help="relative peak-timing tolerance")
    sp.add_argument("--records", action="store_true", default=None,
                    help="also write one CSV per replica")
    sp.add_argument("--out-dir", dest="out_dir")
    return ap


def load_config(path, command):
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    section = data.get(command, {})
    if section is not None and not isinstance(section, dict):
        raise UsageError(f"config section {command!r} must be a mapping")
    flat = {k: v for k, v in data.items() if k not in DEFAULTS}
    flat.update(section or {})
    return {k.replace("-", "_"): v for k, v in flat.items()}


def resolve(args):
    """Merge defaults, config file and flags into one validated settings dict."""
    cmd = args.command
    settings = dict(COMMON_DEFAULTS)
    settings.update(DEFAULTS[cmd])
    known = set(settings)
    cfg = load_config(getattr(args, "config", None), cmd)
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
    settings.update(cfg)
    for k, v in vars(args).items():
        if k in known and v is not None:
            settings[k] = v
    if cmd == "integrate" and settings.get("system") not in (None, "full", "layer", "slow"):
        raise UsageError(f"--system must be full, layer or slow (got {settings['system']!r})")
    missing = [k for k in REQUIRED[cmd] if settings.get(k) is None]
    if cmd == "integrate" and settings.get("system") is not None:
        names = model.SLOW_NAMES if settings["system"] == "slow" else model.REDUCED_NAMES
        missing += [k for k in names if settings.get(k) is None]
        if settings["system"] != "slow" and settings.get("beta") is None:
            missing.append("beta")
    if missing:
        raise UsageError("missing required setting(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))
    return settings


def _params(s, epsilon=True):
    beta = s["beta"] if s.get("beta") is not None else 0.0
    n = s["n"]
    n = int(n) if float(n).is_integer() else float(n)
    return Params(beta=float(beta), gamma=float(s["gamma"]),
                  epsilon=float(s["epsilon"]) if epsilon else 0.0, n=n)


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_integrate(s):
    from .integrate import IntegrationConfig, integrate_system, write_trajectory_csv
    system = s["system"]
    if system not in ("full", "layer", "slow"):
        raise UsageError(f"--system must be full, layer or slow (got {system!r})")
    names = model.SLOW_NAMES if system == "slow" else model.REDUCED_NAMES
    p = _params(s)
    y0 = np.array([float(s[k]) for k in names])
    kw = dict(rel_tol=s["rtol"], abs_tol=s["atol"], max_time=float(s["tmax"]))
    if s.get("max_step"):
        kw["max_step"] = float(s["max_step"])
    traj = integrate_system(system, p, y0, IntegrationConfig(**kw))
    meta = metadata("trajectory", s, system=system, status=traj.status)
    write_trajectory_csv(traj, s["out"], meta, t_name="tau" if system == "slow" else "t")
    if s.get("svg"):
        comps = s["components"].split(",") if s.get("components") else list(names)
        bad = [c for c in comps if c not in names]
        if bad:
            raise UsageError(f"unknown component(s) {bad}; choose from {names}")
        series = [{"x": traj.times, "y": traj.component(c), "label": c} for c in comps]
        svg_plot(s["svg"], series, xlabel="tau" if system == "slow" else "t",
                 ylabel="density", title=f"{system} system", meta=meta)
    return {"status": traj.status, "samples": len(traj)}


def cmd_singular(s):
    from .singular_orbit import find_candidate_cycle, interval_test
    p = _params(s, epsilon=False)
    if not p.epidemic:
        raise ModelDomainError(f"R0 = {model.r0(p):.6g} <= 1: no singular cycle")
    out = _out_dir(s["out_dir"])
    cand = find_candidate_cycle(p, float(s["S0"]), mode=s["mode"], tol=float(s["tol"]),
                                max_iter=int(s["max_iter"]), SS0_init=s.get("SS0"))
    meta = metadata("singular-cycle", s)
    if not cand.converged:
        write_json(os.path.join(out, "diagnostic.json"),
                   {"metadata": meta, "converged": False, "reason": cand.reason,
                    "iterations": cand.iterations,
                    "history": [list(h) for h in cand.history]})
        raise ConvergenceError(f"return-map iteration diverged: {cand.reason}")
    image = interval_test(p, cand.S0, cand.SS0, width=float(s["width"]),
                          samples=int(s["samples"]))
    image.to_csv(os.path.join(out, "interval.csv"), meta)
    image.to_svg(os.path.join(out, "interval.svg"), title=f"beta={p.beta:g}, n={p.n:g}",
                 meta=meta)
    verdict = {"metadata": meta, "transversal": image.transversal,
               "candidate": {"S0": cand.S0, "SS0": cand.SS0, "iterations": cand.iterations},
               "crossing_SS": image.crossing,
               "sample_errors": sum(e is not None for e in image.errors)}
    write_json(os.path.join(out, "verdict.json"), verdict)
    return {"transversal": image.transversal}


def cmd_hopf(s):
    from .bifurcation import sweep_slice
    axes = tuple(a.strip() for a in str(s["axes"]).split(","))
    res = s["resolution"]
    res = [int(r) for r in (res if isinstance(res, (list, tuple)) else [res])]
    if len(res) == 1:
        res = res * 2
    if len(res) != 2 or min(res) < 2:
        raise UsageError("--resolution needs at least 2 cells per axis")
    third = [a for a in ("n", "beta", "epsilon") if a not in axes]
    if len(axes) != 2 or len(third) != 1:
        raise UsageError("--axes must name two of n, beta, epsilon")
    third = third[0]
    if s.get(third) is None:
        raise UsageError(f"--{third} is required for this slice")
    fixed = {third: float(s[third]), "gamma": float(s["gamma"])}
    out = _out_dir(s["out_dir"])
    grid = sweep_slice(axes, fixed, tuple(s["x_range"]), tuple(s["y_range"]), tuple(res))
    meta = metadata("hopf-slice", s)
    grid.to_csv(os.path.join(out, "sweep.csv"), meta)
    grid.hopf_json(os.path.join(out, "hopf_points.json"), meta)
    grid.to_svg(os.path.join(out, "boundary.svg"), title=f"{third} = {fixed[third]:g}", meta=meta)
    n_failed = int((grid.classes == "failed").sum())
    summary = {"metadata": meta, "cells": int(grid.classes.size),
               "limit_cycle_side": int(grid.cycle_side().sum()), "failed_cells": n_failed,
               "hopf_points": len(grid.hopf_points),
               "spectrum_discontinuities": len(grid.discontinuities)}
    write_json(os.path.join(out, "summary.json"), summary)
    if n_failed:
        log.warning("%d cells failed; see sweep.csv", n_failed)
    return summary


def cmd_netsim(s):
    from .netsim import compare_to_ode, run_ensemble, write_ensemble_json
    p = _params(s)
    if not float(p.n).is_integer():
        raise UsageError("--n must be an integer for network simulation")
    N = int(s["N"])
    if (N * int(p.n)) % 2:
        raise ModelDomainError(f"N*n = {N * int(p.n)} is odd")
    out = _out_dir(s["out_dir"])
    records = run_ensemble(N, p, int(s["replicas"]), seed=int(s["seed"]),
                           initial_fraction=float(s["initial_fraction"]),
                           t_max=float(s["tmax"]), sample_dt=float(s["dt"]))
    report = compare_to_ode(records, p, tolerance=float(s["tolerance"]))
    meta = metadata("netsim-ensemble", s)
    write_ensemble_json(os.path.join(out, "ensemble.json"), records, meta, report)
    write_json(os.path.join(out, "comparison.json"), {"metadata": meta, **report.to_dict()})
    if s.get("records"):
        for k, rec in enumerate(records):
            rec.to_csv(os.path.join(out, f"replica_{k:04d}.csv"), meta)
    return report.to_dict()


COMMANDS = {"integrate": cmd_integrate, "singular": cmd_singular, "hopf": cmd_hopf,
            "netsim": cmd_netsim}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        settings = resolve(args)
        result = COMMANDS[args.command](settings)
    except (UsageError, ModelDomainError, yaml.YAMLError, OSError) as exc:
        print(f"pairsirs {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"pairsirs {args.command}: computation failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    log.info("%s", result)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
