import json

import numpy as np
import pytest

from pairsirs import model
from pairsirs.bifurcation import (CYCLE_SIDE, STABLE, classify, fd_jacobian, hopf_bisect,
                                  jacobian_spectrum, max_unstable_epsilon, refine_equilibrium,
                                  sweep_slice)
from pairsirs.errors import PreconditionError
from pairsirs.integrate import integrate_full_stiff, stiff_config
from pairsirs.model import Params
from pairsirs.singular_orbit import find_candidate_cycle, interval_test

Y0 = np.array([0.9, 0.01, 3.2, 0.03, 0.001])


def test_refined_equilibrium_residual():
    for beta, eps in [(2.0, 0.01), (1.2, 0.05), (12.0, 0.2), (0.9, 0.001)]:
        p = Params(beta, 1.0, eps, 4)
        y = refine_equilibrium(p)
        assert np.max(np.abs(model.reduced_rhs(y, p))) <= 1e-12
        assert model.in_delta(y, 4) and y[1] > 0


def test_refinement_approaches_series_at_small_epsilon():
    p = Params(2.0, 1.0, 1e-8, 4)
    y = refine_equilibrium(p)
    s = model.endemic_equilibrium_series(p)
    assert y[0] == pytest.approx(3 / 7, abs=1e-6)
    assert np.max(np.abs(y - s)) < 1e-6


def test_refinement_preconditions():
    with pytest.raises(PreconditionError):
        refine_equilibrium(Params(0.3, 1.0, 0.1, 4))
    with pytest.raises(PreconditionError):
        refine_equilibrium(Params(2.0, 1.0, 0.0, 4))


def test_fd_jacobian_linear_map():
    A = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert np.allclose(fd_jacobian(lambda x: A @ x, np.array([0.3, -2.0])), A, atol=1e-8)


def test_classification_examples():
    assert classify(Params(2.0, 1.0, 0.01, 4)).cls == CYCLE_SIDE
    assert classify(Params(12.0, 1.0, 0.01, 4)).cls == STABLE
    below = classify(Params(0.4, 1.0, 0.01, 4))
    assert below.cls == STABLE and not below.endemic
    at = classify(Params(0.5, 1.0, 0.01, 4))  # R0 = 1 up to rounding
    assert not at.endemic


def test_hopf_bisect_locates_crossing():
    h = hopf_bisect(Params(1.0, 1.0, 0.01, 4), "beta", 0.6, 1.2)
    assert h is not None
    assert abs(h.real) < 1e-5 and h.frequency > 0
    assert h.others_max_real < 0
    eigs = jacobian_spectrum(refine_equilibrium(h.params), h.params)
    assert np.min(np.abs(eigs.real[eigs.imag > 0])) < 1e-5
    json.dumps(h.to_dict())


def test_hopf_bisect_same_class_gives_none():
    assert hopf_bisect(Params(1.0, 1.0, 0.01, 4), "beta", 1.2, 2.0) is None


def test_uniform_small_sweep_has_empty_boundary():
    grid = sweep_slice(("beta", "epsilon"), {"n": 6}, (1.0, 2.0), (0.01, 0.02), (2, 2))
    assert len(grid.boundary) == 0 and not grid.hopf_points
    with pytest.raises(PreconditionError):
        sweep_slice(("beta", "epsilon"), {"n": 6}, (1.0, 2.0), (0.01, 0.02), (1, 1))


def test_sweep_exports(tmp_path):
    grid = sweep_slice(("beta", "epsilon"), {"n": 4}, (0.5, 10.0), (0.005, 0.05), (8, 8))
    assert grid.hopf_points
    assert not grid.discontinuities
    grid.to_csv(tmp_path / "s.csv", {"artifact": "pairsirs"})
    head = (tmp_path / "s.csv").read_text().splitlines()[:2]
    assert head[0].startswith("# ")
    grid.hopf_json(tmp_path / "h.json", {"artifact": "pairsirs"})
    assert json.loads((tmp_path / "h.json").read_text())
    grid.to_svg(tmp_path / "b.svg")


def test_max_unstable_epsilon_empty_for_degree_six():
    eps, beta = max_unstable_epsilon(6, resolution=(20, 20))
    assert eps == 0.0 and beta is None


@pytest.mark.slow
def test_hopf_sides_match_simulation():
    grid = sweep_slice(("beta", "epsilon"), {"n": 4}, (0.2, 12.0), (0.005, 0.1), (16, 16))
    pts = sorted(grid.hopf_points, key=lambda h: (h.axis, h.beta))
    sample = pts[:: max(1, len(pts) // 6)]
    assert len(sample) >= 5
    for h in sample:
        for f in (0.85, 1.15):
            q = h.params.replace(**{h.axis: getattr(h, h.axis) * f})
            c = classify(q)
            # long enough for the slowest linear mode to decay by e^-25
            T = max(400.0 / q.epsilon, 25.0 / abs(c.lead.real))
            rep = integrate_full_stiff(q, Y0, stiff_config(q, max_time=T)).attractor
            expected = "limit-cycle" if c.cls == CYCLE_SIDE else "equilibrium"
            assert rep.kind == expected, (h.to_dict(), f, rep)


def test_hopf_side_agrees_with_interval_test():
    for beta in (1.2, 2.0, 5.0):
        cell = classify(Params(beta, 1.0, 1e-4, 4))
        p0 = Params(beta, 1.0, 0.0, 4)
        cand = find_candidate_cycle(p0, 0.9)
        img = interval_test(p0, cand.S0, cand.SS0)
        assert (cell.cls == CYCLE_SIDE) == bool(img.transversal)
