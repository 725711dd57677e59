"""One test per acceptance criterion, at the stated tolerance and budget.

Each test prints a single PASS/FAIL line; the lines are repeated in the
pytest terminal summary.
"""
import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from pairsirs import fastslow, model
from pairsirs.bifurcation import (CYCLE_SIDE, classify, hopf_bisect, max_unstable_epsilon,
                                  sweep_slice)
from pairsirs.integrate import IntegrationConfig, integrate, integrate_full_stiff, integrate_system
from pairsirs.model import Params
from pairsirs.netsim import compare_to_ode, run_ensemble
from pairsirs.singular_orbit import (detect_attractor, find_candidate_cycle, interval_test,
                                     layer_landing)

Y0_FULL = np.array([0.9, 0.01, 3.2, 0.03, 0.001])


def test_c01_ngm_equivalence(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        p = Params(rng.uniform(0.05, 10.0), rng.uniform(0.1, 5.0), rng.uniform(0.0, 2.0),
                   rng.uniform(2.1, 20.0))
        worst = max(worst, abs(model.r1_ngm(p) - model.r1_closed(p)))
    elapsed = time.perf_counter() - start
    verdict("C1 NGM oracle equivalence", worst <= 1e-10 and elapsed < 1.0,
            f"max |r1_ngm - r1_closed| = {worst:.2e} (<= 1e-10), {elapsed:.2f} s (< 1 s)")


def test_c02_conservation(verdict):
    rng = np.random.default_rng(7)
    p = Params(2.0, 1.0, 0.01, 4)
    cfg = IntegrationConfig(max_time=100.0, dense=False)
    integrate(model.full_rhs_kernel, model.complete_state(model.random_physical_point(4, rng), 4),
              IntegrationConfig(max_time=1.0), args=p.as_array())  # warm-up (cache load)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        y0 = model.complete_state(model.random_physical_point(4, rng), 4)
        traj = integrate(model.full_rhs_kernel, y0, cfg, args=p.as_array(),
                         names=model.FULL_NAMES)
        res = np.array([model.constraint_residuals(s, 4) for s in traj.states])
        worst = max(worst, float(np.max(np.abs(res))))
    elapsed = time.perf_counter() - start
    verdict("C2 conservation of edge identities", worst <= 1e-7 and elapsed < 10.0,
            f"max residual {worst:.2e} (<= 1e-7) over 20 starts, {elapsed:.2f} s (< 10 s)")


def test_c03_c0_invariance(verdict):
    p = Params(2.0, 1.0, 0.05, 4)
    worst = 0.0
    for S, SS in [(0.3, 0.2), (0.7, 1.5), (0.95, 3.6), (0.1, 0.0)]:
        traj = integrate_system("full", p, np.array([S, 0.0, SS, 0.0, 0.0]),
                                IntegrationConfig(max_time=50.0))
        worst = max(worst, float(np.max(np.abs(traj.states[:, [1, 3, 4]]))))
    verdict("C3 critical manifold invariance", worst <= 1e-12,
            f"max |I|,|SI|,|II| = {worst:.2e} (<= 1e-12) over t in [0, 50]")


def test_c04_slow_flow_exactness(verdict):
    p = Params(2.0, 1.0, 0.0, 4)
    err_num, err_d = 0.0, 0.0
    for entry in [(0.0, 0.0), (0.2, 0.3), (0.5, 1.0), (0.05, 0.01), (0.8, 1.2)]:
        traj = integrate_system("slow", p, np.array(entry), IntegrationConfig(max_time=8.0))
        exact = fastslow.slow_solution(entry, traj.times, 4)
        err_num = max(err_num, float(np.max(np.abs(traj.states[:, 0] - exact.S))),
                      float(np.max(np.abs(traj.states[:, 1] - exact.SS))))
        d0 = fastslow.parabola_distance(entry, 4)
        for tau in np.linspace(0.0, 8.0, 33):
            d = fastslow.parabola_distance(fastslow.slow_solution(entry, tau, 4), 4)
            err_d = max(err_d, abs(d - math.exp(-2.0 * tau) * d0))
    verdict("C4 slow-flow exactness", err_num <= 1e-8 and err_d <= 1e-12,
            f"numeric vs closed form {err_num:.2e} (<= 1e-8); "
            f"distance decay error {err_d:.2e} (<= 1e-12)")


def test_c05_entry_point_roots(verdict):
    p = Params(2.0, 1.0, 0.0, 4)
    root_err = abs(fastslow.entry_root_H(1.0, 4.0, p) - ((math.sqrt(3.0) - 1.0) / 2.0) ** 4)
    worst = {}
    for n in (3, 5, 50):
        q = Params(1.5, 1.0, 0.0, n)
        threshold = 1.0 / model.r1_fast(q)
        errs = []
        for S0 in np.linspace(threshold, 1.0, 21)[1:]:
            landed, _ = layer_landing(S0, n * S0 * S0, q, delta=1e-3)
            errs.append(abs(landed.S - fastslow.entry_root_G(S0, q)))
        worst[n] = max(errs)
    ok = root_err <= 1e-10 and all(w <= 1e-2 for w in worst.values())
    verdict("C5 entry-point roots", ok,
            f"H root error {root_err:.1e} (<= 1e-10); root vs layer landing max error "
            + ", ".join(f"n={n}: {w:.2e}" for n, w in worst.items()) + " (<= 1e-2)")


def test_c06_entry_exit_consistency(verdict):
    p = Params(2.0, 1.0, 0.0, 4)
    s1 = brentq(lambda s: 2.0 * s + math.log1p(-s), 0.5, 0.99, xtol=1e-15)
    ex0 = fastslow.parabola_exit(0.0, p).S
    T_E = fastslow.exit_time((0.0, 0.0), p).exit_time
    oracle_ok = abs(ex0 - s1) < 1e-8 and abs(T_E + math.log1p(-s1)) < 1e-8
    quad_err = 0.0
    for S in np.linspace(0.0, 0.45, 10):
        entry = (S, 4.0 * S * S)
        quad_err = max(quad_err, abs(fastslow.exit_time(entry, p).exit_time
                                     - fastslow.exit_time_quadrature(entry, p).exit_time))
    C = fastslow.parabola_exponent(p)
    exits = np.array([fastslow.parabola_exit(s, p).S
                      for s in np.linspace(0.0, (1.0 - C) * 0.999, 100)])
    decreasing = bool(np.all(np.diff(exits) < 0))
    verdict("C6 entry-exit consistency", oracle_ok and quad_err <= 1e-8 and decreasing,
            f"exit(0) = {ex0:.6f}, T_E = {T_E:.6f} (oracle {s1:.6f}, {-math.log1p(-s1):.6f}); "
            f"closed form vs quadrature {quad_err:.1e} (<= 1e-8); "
            f"exit map strictly decreasing: {decreasing}")


def test_c07_interval_test_and_attractors(verdict):
    start = time.perf_counter()
    verdicts = {}
    for beta in (2.0, 1.2):
        p0 = Params(beta, 1.0, 0.0, 4)
        cand = find_candidate_cycle(p0, 0.9)
        img = interval_test(p0, cand.S0, cand.SS0) if cand.converged else None
        rep = integrate_full_stiff(Params(beta, 1.0, 0.01, 4), Y0_FULL).attractor
        verdicts[beta] = (None if img is None else img.transversal, rep.kind)
    elapsed = time.perf_counter() - start
    ok = (verdicts[2.0] == (True, "limit-cycle") and verdicts[1.2] == (False, "equilibrium")
          and elapsed < 120.0)
    verdict("C7 interval test and attractors", ok,
            f"beta=2: transversal={verdicts[2.0][0]}, full system {verdicts[2.0][1]} "
            f"(expected True, limit-cycle); beta=1.2: transversal={verdicts[1.2][0]}, "
            f"full system {verdicts[1.2][1]} (expected False, equilibrium); {elapsed:.1f} s")


def test_c08a_hopf_between_1p2_and_2(verdict):
    start = time.perf_counter()
    betas = np.linspace(1.2, 2.0, 100)
    classes = [classify(Params(b, 1.0, 0.01, 4)).cls for b in betas]
    hopf = [hopf_bisect(Params(1.0, 1.0, 0.01, 4), "beta", a, b)
            for a, b, ca, cb in zip(betas[:-1], betas[1:], classes[:-1], classes[1:]) if ca != cb]
    hopf = [h for h in hopf if h is not None]
    wide = [h.beta for h in (hopf_bisect(Params(1.0, 1.0, 0.01, 4), "beta", 0.6, 1.2),
                             hopf_bisect(Params(1.0, 1.0, 0.01, 4), "beta", 2.0, 15.0))
            if h is not None]
    elapsed = time.perf_counter() - start
    verdict("C8a Hopf point in beta (1.2, 2), n=4, eps=0.01", bool(hopf) and elapsed < 300,
            f"{len(hopf)} Hopf points in (1.2, 2); every cell is "
            f"{set(classes)}; nearest Hopf points at beta = "
            + ", ".join(f"{b:.4f}" for b in wide) + f"; {elapsed:.1f} s")


def test_c08b_no_hopf_for_degree_six(verdict):
    start = time.perf_counter()
    grid = sweep_slice(("beta", "epsilon"), {"n": 6}, (0.0, 15.0), (1e-3, 0.25), (100, 100))
    elapsed = time.perf_counter() - start
    failed = int((grid.classes == "failed").sum())
    ok = not grid.hopf_points and not grid.cycle_side().any() and failed == 0 and elapsed < 300
    verdict("C8b no Hopf points at n=6", ok,
            f"{len(grid.hopf_points)} Hopf points, {int(grid.cycle_side().sum())} unstable cells, "
            f"{failed} failed cells on 100x100; {elapsed:.1f} s (< 300 s)")


def test_c08c_largest_epsilon_over_degrees(verdict):
    results = {}
    slowest = 0.0
    for n in (3, 4, 5):
        start = time.perf_counter()
        results[n] = max_unstable_epsilon(n, resolution=(100, 100))
        slowest = max(slowest, time.perf_counter() - start)
    eps_star = max(e for e, _ in results.values())
    ok = abs(eps_star - 0.18) <= 0.03 and slowest < 300
    verdict("C8c largest epsilon with a Hopf point, n in {3,4,5}", ok,
            f"eps* = {eps_star:.4f} (expected 0.18 +- 0.03); per degree "
            + ", ".join(f"n={n}: {e:.4f} at beta={b}" for n, (e, b) in results.items())
            + f"; slowest slice {slowest:.1f} s")


def test_c09_stochastic_validation(verdict):
    start = time.perf_counter()
    p = Params(2.0, 1.0, 0.0, 4)
    records = run_ensemble(10_000, p, 50, seed=20240601, t_max=20.0, sample_dt=0.05)
    report = compare_to_ode(records, p, tolerance=0.15)
    identities = all(np.all(r.edge_identity_residuals() == 0) for r in records)
    elapsed = time.perf_counter() - start
    ok = report.within_tolerance and identities and elapsed < 120.0
    verdict("C9 stochastic validation", ok,
            f"peak time sim {report.peak_time_sim:.3f} vs ODE {report.peak_time_ode:.3f}, "
            f"relative error {report.peak_rel_error:.3%} (<= 15%); edge identities exact: "
            f"{identities}; {elapsed:.1f} s (< 120 s)")


def test_c10_property_suite(verdict):
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    checks = {}

    # forward invariance of the admissible set, physically consistent starts
    worst_neg, worst_viol = 0.0, 0.0
    cfg = IntegrationConfig(max_time=100.0, dense=False)
    for k in range(1000):
        n = (3, 4, 5, 6, 10)[k % 5]
        p = Params(rng.uniform(0.05, 6.0), rng.uniform(0.2, 3.0), rng.uniform(0.0, 1.0), n)
        traj = integrate_system("full", p, model.random_physical_point(n, rng), cfg)
        worst_neg = min(worst_neg, float(traj.states.min()))
        worst_viol = max(worst_viol, max(model.delta_violation(s, n) for s in traj.states))
    checks["invariance"] = worst_neg >= -1e-9 and worst_viol <= 1e-7

    # layer flow: monotone S and SS, vanishing infected tail, conserved V
    mono, tail, drift = 0.0, 0.0, 0.0
    for k in range(100):
        n = (3, 4, 5, 6)[k % 4]
        p = Params(rng.uniform(1.5, 5.0) / (n - 2), 1.0, 0.0, n)
        y0 = model.random_physical_point(n, rng)
        while y0[0] < 0.05 or y0[2] < 0.01 * n * y0[0]:
            y0 = model.random_physical_point(n, rng)
        traj = integrate_system("layer", p, y0, IntegrationConfig(max_time=200.0, dense=False))
        mono = max(mono, float(np.max(np.diff(traj.states[:, [0, 2]], axis=0))))
        tail = max(tail, float(np.max(np.abs(traj.final[[1, 3, 4]]))))
        V = fastslow.constant_of_motion(traj.states[:, 0], traj.states[:, 2], n)
        drift = max(drift, float(np.max(np.abs(V - V[0]))))
    checks["layer"] = mono <= 1e-10 and tail <= 1e-8 and drift <= 1e-6

    # slow flow: the region below alpha is forward invariant
    above = -np.inf
    for k in range(100):
        n = (3, 4, 5, 6)[k % 4]
        g = model.geometry(Params(2.0, 1.0, 0.0, n))
        S0 = rng.uniform(0.0, 0.95)
        traj = integrate_system("slow", Params(2.0, 1.0, 0.0, n),
                                np.array([S0, rng.uniform(0.0, 1.0) * float(g.alpha(S0))]),
                                IntegrationConfig(max_time=10.0))
        pts = traj.sol(np.linspace(0.0, 10.0, 200))
        above = max(above, float(np.max(pts[:, 1] - g.alpha(pts[:, 0]))))
    checks["alpha"] = above <= 1e-9

    # lambda5 sign agrees with the side of the L-line
    agree = True
    for _ in range(100):
        n = rng.choice([3, 4, 5, 6, 10])
        p = Params(rng.uniform(0.05, 6.0), rng.uniform(0.2, 3.0), 0.0, n)
        S = rng.uniform(0.01, 1.0, 200)
        SS = rng.uniform(0.0, 1.0, 200) * n * S
        side = SS - model.geometry(p).L_line(S)
        clear = np.abs(side) > 1e-9 * n
        agree &= bool(np.all(np.sign(model.lambda5(S, SS, p)[clear]) == np.sign(side[clear])))
    checks["lambda5"] = agree

    elapsed = time.perf_counter() - start
    verdict("C10 property suite", all(checks.values()) and elapsed < 60.0,
            f"invariance min {worst_neg:.1e}, violation {worst_viol:.1e}; layer monotone "
            f"{mono:.1e}, tail {tail:.1e}, V drift {drift:.1e}; alpha excess {above:.1e}; "
            f"lambda5/L-line agreement {agree}; {elapsed:.1f} s (< 60 s)")


# ---------------------------------------------------------------------------
# supplementary diagnostics for the criteria that fail as stated


def test_supplementary_landing_error_scales_with_seed(verdict):
    q = Params(1.5, 1.0, 0.0, 3)
    S0s = np.linspace(1.0 / model.r1_fast(q), 1.0, 21)[1:]
    errs = {}
    for delta in (1e-3, 1e-5):
        errs[delta] = max(abs(layer_landing(S0, 3 * S0 * S0, q, delta=delta)[0].S
                              - fastslow.entry_root_G(S0, q)) for S0 in S0s)
    ratio = errs[1e-3] / errs[1e-5]
    verdict("S5 landing error is linear in the seed size (n=3)", 50 < ratio < 200,
            f"max error {errs[1e-3]:.2e} at seed 1e-3, {errs[1e-5]:.2e} at seed 1e-5, "
            f"ratio {ratio:.0f}")


def test_supplementary_beta12_is_stable(verdict):
    rep = integrate_full_stiff(Params(12.0, 1.0, 0.01, 4), Y0_FULL).attractor
    cell = classify(Params(12.0, 1.0, 0.01, 4))
    verdict("S7 equilibrium side exists at n=4, eps=0.01",
            rep.kind == "equilibrium" and cell.cls != CYCLE_SIDE,
            f"beta=12: full system {rep.kind}, spectrum class {cell.cls}")


def test_supplementary_eps_star_over_real_degrees(verdict):
    best = max((max_unstable_epsilon(n, beta_range=(0.0, 1000.0), eps_range=(1e-3, 0.4),
                                     resolution=(80, 60))[0], n) for n in (2.05, 2.1, 2.2))
    verdict("S8 largest epsilon over real degrees near 2", abs(best[0] - 0.18) <= 0.03,
            f"eps* = {best[0]:.4f} at n = {best[1]} with beta <= 1000 (expected 0.18 +- 0.03)")
