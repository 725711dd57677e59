"""Singular orbits built from a fast jump and a slow passage, and attractor classification.

The fast map ``pi1_fast`` sends a point of the repelling part of the
critical manifold to where its layer orbit lands; the slow map
``pi2_slow`` follows the slow flow from there until the entry-exit
relation releases the orbit again.  A fixed point of the composition is a
candidate singular cycle.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fastslow, model
from .errors import ModelDomainError, PreconditionError
from .integrate import Event, IntegrationConfig, integrate_system
from .io import svg_plot
from .model import Params, SlowPoint

LANDING_DELTA = 1e-3
LANDING_THRESHOLD = 1e-13


# ---------------------------------------------------------------------------
# fast and slow maps


def layer_seed(S0, SS0, n, delta=LANDING_DELTA):
    """Admissible state next to ``(S0, SS0)`` with infected mass ``delta``.

    I = SI = II = delta; S and SS are pulled inside the admissible set when
    the critical-manifold point sits on its boundary.
    """
    S = min(S0, 1.0 - delta)
    SS = min(SS0, n * S - delta)
    return np.array([S, delta, SS, delta, delta])


def layer_landing(S0, SS0, p: Params, delta=LANDING_DELTA, max_time=1e5):
    """Landing point of the layer flow seeded next to ``(S0, SS0)``, by direct integration."""
    y0 = layer_seed(S0, SS0, p.n, delta)
    stop = Event(lambda t, y: y[1] + y[3] + y[4] - LANDING_THRESHOLD, direction=-1,
                 terminal=True, name="infected mass vanishes")
    cfg = IntegrationConfig(max_time=max_time, events=[stop], dense=False)
    traj = integrate_system("layer", p.replace(epsilon=0.0), y0, cfg)
    return SlowPoint(float(traj.final[0]), float(traj.final[2])), traj


def pi1_fast(point, p: Params, verify=False, delta=LANDING_DELTA, tol=1e-2):
    """Landing point of the fast jump from ``point`` (root of H plus the conserved quantity).

    With ``verify`` the result is compared against direct layer integration
    and a :class:`ConsistencyError` is raised if they differ by more than ``tol``.
    """
    S0, SS0 = float(point[0]), float(point[1])
    S_inf = fastslow.entry_root_H(S0, SS0, p)
    landed = SlowPoint(S_inf, fastslow.ss_infinity(S0, SS0, S_inf, p.n))
    if verify:
        from .errors import ConsistencyError
        direct, _ = layer_landing(S0, SS0, p, delta)
        if max(abs(direct.S - landed.S), abs(direct.SS - landed.SS)) > tol:
            raise ConsistencyError(f"fast map {landed} disagrees with layer integration {direct}")
    return landed


def pi1_fast_parabola(S0, p: Params):
    """Fast jump from the parabola point ``(S0, n S0^2)``; landing SS also put on the parabola."""
    S_inf = fastslow.entry_root_G(S0, p)
    return SlowPoint(S_inf, p.n * S_inf ** 2)


def pi2_slow(entry, p: Params, verify=None):
    """Exit point of the slow passage entering at ``entry``."""
    return fastslow.exit_time(entry, p, verify=verify).exit


def return_map(point, p: Params, mode="general"):
    """One fast jump followed by one slow passage.

    ``mode="general"`` uses the H root and the exact slow flow; ``"parabola"``
    approximates both landing and exit on the parabola (G root and h-map).
    """
    if mode == "general":
        return pi2_slow(pi1_fast(point, p), p)
    if mode == "parabola":
        entry = pi1_fast_parabola(float(point[0]), p)
        return fastslow.parabola_exit(entry.S, p)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class CycleCandidate:
    S0: float
    SS0: float
    converged: bool
    iterations: int
    step: float  # size of the last update in S0
    history: list = field(default_factory=list)
    reason: str = ""

    @property
    def point(self):
        return SlowPoint(self.S0, self.SS0)


def find_candidate_cycle(p: Params, S0_init, mode="general", tol=1e-8, max_iter=200,
                         SS0_init=None):
    """Iterate the return map from ``(S0_init, n S0_init^2)`` towards a fixed point.

    A step that would leave the repelling part of the critical manifold is
    halved (damping 0.5) before it is applied.  Failures are reported in
    ``reason`` instead of raised.
    """
    if not p.epidemic:
        raise PreconditionError("R0 <= 1: no outbreaks, hence no singular cycle")
    L = model.geometry(p).slope
    x = SlowPoint(float(S0_init), float(SS0_init if SS0_init is not None else p.n * S0_init ** 2))
    history = [x]
    step = math.inf
    for it in range(1, max_iter + 1):
        try:
            y = return_map(x, p, mode)
        except (ModelDomainError, ArithmeticError) as exc:
            return CycleCandidate(x.S, x.SS, False, it, step, history,
                                  f"map undefined at iterate {it}: {exc}")
        for _ in range(60):
            if y.S < 1.0 and y.SS > L * y.S and y.SS <= p.n * y.S:
                break
            y = SlowPoint(x.S + 0.5 * (y.S - x.S), x.SS + 0.5 * (y.SS - x.SS))
        else:
            return CycleCandidate(x.S, x.SS, False, it, step, history,
                                  "iterate left the repelling region")
        step = abs(y.S - x.S)
        x = y
        history.append(x)
        if step < tol:
            return CycleCandidate(x.S, x.SS, True, it, step, history)
    return CycleCandidate(x.S, x.SS, False, max_iter, step, history,
                          f"no convergence in {max_iter} iterations")


# ---------------------------------------------------------------------------
# interval test


@dataclass
class IntervalImage:
    S0: float
    J1: np.ndarray  # SS values on the section S = S0
    J2: np.ndarray  # landing points, shape (k, 2); NaN where a sample failed
    J3: np.ndarray  # exit points, shape (k, 2)
    errors: list
    transversal: Optional[bool]  # None when undecided
    crossing: Optional[float] = None  # interpolated SS on J1 where J3 meets it

    @property
    def offset(self):
        return self.J3[:, 1] - self.J1

    def rows(self):
        for i, ss in enumerate(self.J1):
            yield (i, self.S0, ss, *self.J2[i], *self.J3[i])

    def to_csv(self, path, metadata=None):
        with open(path, "w", newline="") as fh:
            if metadata is not None:
                fh.write("# " + json.dumps(metadata, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(["index", "S0", "SS0", "S_inf", "SS_inf", "S1", "SS1", "error"])
            for row, err in zip(self.rows(), self.errors):
                w.writerow([row[0], *(repr(float(v)) for v in row[1:]), err or ""])

    def to_svg(self, path, title="", meta=None):
        ok = np.isfinite(self.J3[:, 0])
        svg_plot(path, [
            {"x": np.full(len(self.J1), self.S0), "y": self.J1, "label": "J1", "style": "line"},
            {"x": self.J3[ok, 0], "y": self.J3[ok, 1], "label": "J3", "style": "points"},
        ], xlabel="S", ylabel="SS", title=title, meta=meta)


def interval_test(p: Params, S0_candidate, SS0_candidate=None, width=1e-2, samples=21,
                  slope_tol=1e-12):
    """Map a vertical segment J1 at ``S = S0_candidate`` through the return map.

    J1 has the given ``width`` in SS, centred at ``SS0_candidate`` (default:
    the parabola).  The test is transversal when ``SS(J3) - SS(J1)`` changes
    sign along the sample and the secant through the sign change has a
    nonzero slope.  Samples where a map is undefined are tagged in
    ``errors`` and skipped.
    """
    S0 = float(S0_candidate)
    centre = p.n * S0 ** 2 if SS0_candidate is None else float(SS0_candidate)
    if width <= 0 or samples < 2:
        J1 = np.array([centre])
    else:
        J1 = centre + np.linspace(-0.5 * width, 0.5 * width, samples)
    J2 = np.full((J1.size, 2), np.nan)
    J3 = np.full((J1.size, 2), np.nan)
    errors = []
    for i, ss in enumerate(J1):
        try:
            J2[i] = pi1_fast((S0, ss), p)
            J3[i] = pi2_slow(tuple(J2[i]), p)
            errors.append(None)
        except (ModelDomainError, ArithmeticError) as exc:
            errors.append(f"{type(exc).__name__}: {exc}")
    image = IntervalImage(S0, J1, J2, J3, errors, None)
    if J1.size < 2:
        return image
    off = image.offset
    good = np.flatnonzero(np.isfinite(off))
    if good.size < 2:
        return image
    image.transversal = False
    for a, b in zip(good[:-1], good[1:]):
        if off[a] == 0.0 or np.sign(off[a]) != np.sign(off[b]):
            slope = (off[b] - off[a]) / (J1[b] - J1[a])
            if abs(slope) > slope_tol:
                image.transversal = True
                image.crossing = float(J1[a] - off[a] / slope)
                break
    return image


# ---------------------------------------------------------------------------
# attractor classification


@dataclass
class AttractorReport:
    kind: str  # "equilibrium" | "limit-cycle" | "undecided"
    beta: float
    epsilon: float
    n: float
    gamma: float = 1.0
    period: Optional[float] = None
    amplitude: float = 0.0  # max - min of I over the tail
    deviation: Optional[float] = None  # tail distance from the equilibrium
    peaks: int = 0
    equilibrium: Optional[list] = None
    note: str = ""

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


EQUILIBRIUM_TOL = 1e-6
PERIOD_SPREAD = 0.01
PEAK_SPREAD = 0.05
AMPLITUDE_FACTOR = 1.0


def _reference_equilibria(p: Params):
    refs = [np.array([1.0, 0.0, p.n, 0.0, 0.0])]
    if p.epidemic and p.epsilon > 0:
        from .bifurcation import refine_equilibrium
        try:
            refs.insert(0, refine_equilibrium(p))
        except Exception:  # noqa: BLE001 - fall back to the other references
            pass
    return refs


def detect_attractor(traj, p: Params, tail_fraction=0.2, amplitude_factor=AMPLITUDE_FACTOR,
                     min_samples=20):
    """Classify the tail of a full-system trajectory.

    Equilibrium: the tail stays within 1e-6 of the refined endemic (or the
    disease-free) equilibrium, or is constant to 1e-6 at a rest point.
    Limit cycle: at least three successive maxima of I above the tail's
    mid-level, with period spread below 1%, peak-height spread below 5% and
    I-amplitude above ``amplitude_factor * epsilon``.
    """
    t = np.asarray(traj.times)
    Y = np.asarray(traj.states)
    span = t[-1] - t[0]
    mask = t >= t[-1] - tail_fraction * span
    base = dict(beta=p.beta, epsilon=p.epsilon, n=p.n, gamma=p.gamma)
    if span <= 0:
        return AttractorReport("undecided", note="empty trajectory", **base)
    tail_t, tail = t[mask], Y[mask]
    if mask.sum() < min_samples and getattr(traj, "dense", None) is not None:
        # few long steps (slow drift or rest point): resample the dense output
        tail_t = np.linspace(t[-1] - tail_fraction * span, t[-1], 4 * min_samples)
        tail = traj.sol(tail_t)
    if len(tail_t) < 2:
        return AttractorReport("undecided", note="tail too short", **base)
    I = tail[:, 1]
    amplitude = float(I.max() - I.min())

    best = None
    for ref in _reference_equilibria(p):
        dev = float(np.max(np.abs(tail - ref)))
        if best is None or dev < best[0]:
            best = (dev, ref)
    if best[0] < EQUILIBRIUM_TOL:
        return AttractorReport("equilibrium", amplitude=amplitude, deviation=best[0],
                               equilibrium=best[1].tolist(), **base)
    spread = float(np.max(tail.max(axis=0) - tail.min(axis=0)))
    if spread < EQUILIBRIUM_TOL:
        speed = float(np.max(np.abs(model.reduced_rhs_kernel(0.0, tail[-1], p.as_array()))))
        if speed < 1e-9:
            return AttractorReport("equilibrium", amplitude=amplitude, deviation=spread,
                                   equilibrium=tail[-1].tolist(), note="rest point", **base)

    if len(tail_t) < min_samples:
        return AttractorReport("undecided", amplitude=amplitude, deviation=best[0],
                               note="too few tail samples to count maxima", **base)
    mid = 0.5 * (I.max() + I.min())
    inner = np.flatnonzero((I[1:-1] > I[:-2]) & (I[1:-1] >= I[2:]) & (I[1:-1] > mid)) + 1
    # collapse plateaus / repeated maxima within one excursion above mid-level
    peaks = []
    for i in inner:
        if peaks and not np.any(I[peaks[-1]:i] < mid):
            if I[i] > I[peaks[-1]]:
                peaks[-1] = i
            continue
        peaks.append(i)
    report = AttractorReport("undecided", amplitude=amplitude, deviation=best[0],
                             peaks=len(peaks), **base)
    if len(peaks) < 3:
        report.note = "fewer than three maxima in the tail"
        return report
    peak_t = np.array([_refine_peak(tail_t, I, i) for i in peaks])
    periods = np.diff(peak_t)
    period = float(periods.mean())
    heights = I[peaks]
    report.period = period
    if (periods.max() - periods.min()) / period >= PERIOD_SPREAD:
        report.note = "irregular period"
        return report
    if (heights.max() - heights.min()) / heights.max() >= PEAK_SPREAD:
        report.note = "peak heights drift (transient oscillation)"
        return report
    if amplitude <= amplitude_factor * p.epsilon:
        report.note = f"amplitude {amplitude:.3g} below {amplitude_factor:g}*epsilon"
        return report
    report.kind = "limit-cycle"
    return report


def _refine_peak(t, y, i):
    """Vertex of the parabola through the three samples around a discrete maximum."""
    t0, t1, t2 = t[i - 1], t[i], t[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = (t0 - t1) * (t0 - t2) * (t1 - t2)
    if denom == 0:
        return t1
    a = (t2 * (y1 - y0) + t1 * (y0 - y2) + t0 * (y2 - y1)) / denom
    b = (t2 * t2 * (y0 - y1) + t1 * t1 * (y2 - y0) + t0 * t0 * (y1 - y2)) / denom
    if a >= 0:
        return t1
    tv = -b / (2 * a)
    return tv if t0 <= tv <= t2 else t1
