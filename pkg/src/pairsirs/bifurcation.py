"""Endemic equilibrium refinement, its spectrum, Hopf points and parameter sweeps.

A cell of a sweep is labelled ``stable`` when every eigenvalue of the
refined endemic equilibrium has negative real part and ``limit-cycle-side``
otherwise.  Parameter sets without an endemic equilibrium (R0 <= 1) are
labelled ``stable`` with ``endemic=False``: the disease-free state attracts.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model
from ._accel import kernel
from .errors import ConvergenceError, PreconditionError
from .io import _plain, svg_plot, write_json
from .model import Params

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
FD_REL_STEP = 1e-6
HOPF_TOL = 1e-6
STABLE, CYCLE_SIDE, FAILED = "stable", "limit-cycle-side", "failed"
AXES = ("n", "beta", "epsilon")


@kernel
def fd_jacobian_kernel(y, p):
    """Central-difference Jacobian of the reduced field at ``y``."""
    dim = y.shape[0]
    J = np.empty((dim, dim))
    yp = y.copy()
    for j in range(dim):
        h = FD_REL_STEP * max(1.0, abs(y[j]))
        yp[j] = y[j] + h
        fp = model.reduced_rhs_kernel(0.0, yp, p)
        yp[j] = y[j] - h
        fm = model.reduced_rhs_kernel(0.0, yp, p)
        yp[j] = y[j]
        for i in range(dim):
            J[i, j] = (fp[i] - fm[i]) / (2.0 * h)
    return J


@kernel
def newton_kernel(y0, p, tol, maxiter):
    """Damped Newton iteration on the reduced field.

    Returns ``(y, residual, iterations, status)`` with status 0 converged,
    1 out of iterations, 2 line search failed, 3 singular Jacobian.
    """
    y = y0.copy()
    f = model.reduced_rhs_kernel(0.0, y, p)
    res = np.max(np.abs(f))
    for it in range(maxiter):
        if res <= tol:
            return y, res, it, 0
        J = fd_jacobian_kernel(y, p)
        if abs(np.linalg.det(J)) < 1e-300:
            return y, res, it, 3
        dy = np.linalg.solve(J, -f)
        lam = 1.0
        accepted = False
        for _ in range(40):
            yn = y + lam * dy
            fn = model.reduced_rhs_kernel(0.0, yn, p)
            rn = np.max(np.abs(fn))
            if rn < res or rn <= tol:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            return y, res, it, 2
        y, f, res = yn, fn, rn
    return y, res, maxiter, 0 if res <= tol else 1


def fd_jacobian(fun, x, rel_step=FD_REL_STEP):
    """Central-difference Jacobian of an arbitrary vector field ``fun(x)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h)
    return J


ENDEMIC_MIN_I = 1e-12
THRESHOLD_MARGIN = 1e-9


def _is_endemic(y, n):
    return y[1] > ENDEMIC_MIN_I and model.in_delta(y, n, tol=1e-9)


def newton_refine(seed, p: Params, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER):
    """Newton from ``seed``; raises :class:`ConvergenceError` on failure."""
    y, res, it, status = newton_kernel(np.asarray(seed, dtype=float), p.as_array(),
                                       tol, maxiter)
    if status != 0:
        reason = {1: "iteration limit", 2: "line search failed", 3: "singular Jacobian"}[status]
        raise ConvergenceError(f"Newton failed ({reason}) after {it} iterations, "
                               f"residual {res:.3g}", residual=res, state=y)
    return y


def refine_equilibrium(p: Params, seed=None):
    """Endemic equilibrium of the reduced system with waning, residual <= 1e-12.

    Seeds tried in order: ``seed`` if given, the first-order series, then a
    continuation in epsilon starting from a small value where the series is
    accurate.
    """
    if not p.epidemic:
        raise PreconditionError("R0 <= 1: no endemic equilibrium")
    if not p.epsilon > 0:
        raise PreconditionError("refinement needs epsilon > 0 (at epsilon = 0 the "
                                "critical manifold is a continuum of equilibria)")
    last = None
    seeds = [] if seed is None else [np.asarray(seed, dtype=float)]
    seeds.append(model.endemic_equilibrium_series(p))
    for s in seeds:
        try:
            y = newton_refine(s, p)
        except ConvergenceError as exc:
            last = exc
            continue
        if _is_endemic(y, p.n):
            return y
    y = _epsilon_continuation(p)
    if y is not None:
        return y
    if last is not None:
        raise last
    raise ConvergenceError("Newton converged only to non-endemic states")


def _epsilon_continuation(p: Params, steps=24):
    eps0 = min(1e-4, p.epsilon)
    path = np.geomspace(eps0, p.epsilon, steps)
    q = p.replace(epsilon=float(path[0]))
    try:
        y = newton_refine(model.endemic_equilibrium_series(q), q)
    except ConvergenceError:
        return None
    for eps in path[1:]:
        q = p.replace(epsilon=float(eps))
        try:
            y = newton_refine(y, q)
        except ConvergenceError:
            return None
    return y if _is_endemic(y, p.n) else None


def jacobian_spectrum(state, p: Params):
    """Eigenvalues of the central-difference Jacobian of the reduced field."""
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise PreconditionError("state must be finite")
    J = fd_jacobian_kernel(state, p.as_array())
    return np.linalg.eigvals(J)


def leading(eigs):
    return eigs[np.argmax(eigs.real)]


# ---------------------------------------------------------------------------
# classification and Hopf points


@dataclass
class CellResult:
    cls: str
    endemic: bool
    eigenvalues: Optional[np.ndarray] = None
    state: Optional[np.ndarray] = None
    error: str = ""

    @property
    def lead(self):
        if self.eigenvalues is None:
            return complex("nan")
        return complex(leading(self.eigenvalues))


def classify(p: Params, seed=None):
    """Spectrum-based label of one parameter set (never raises).

    Within ``THRESHOLD_MARGIN`` of R0 = 1 the endemic branch is numerically
    indistinguishable from the disease-free state and the cell is treated as
    non-endemic.
    """
    if not p.epidemic or model.r0(p) - 1.0 <= THRESHOLD_MARGIN:
        return CellResult(STABLE, False)
    try:
        y = refine_equilibrium(p, seed)
        eigs = jacobian_spectrum(y, p)
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        return CellResult(FAILED, True, error=f"{type(exc).__name__}: {exc}")
    cls = CYCLE_SIDE if eigs.real.max() > 0 else STABLE
    return CellResult(cls, True, eigs, y)


@dataclass
class HopfPoint:
    n: float
    beta: float
    epsilon: float
    gamma: float
    real: float  # real part of the critical pair at the reported point
    frequency: float  # imaginary part of the critical pair
    others_max_real: float  # largest real part among the remaining eigenvalues
    axis: str = ""

    @property
    def pair(self):
        return (complex(self.real, self.frequency), complex(self.real, -self.frequency))

    @property
    def params(self):
        return Params(self.beta, self.gamma, self.epsilon, self.n)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _upper(eigs, imag_tol=1e-9):
    return eigs[eigs.imag > imag_tol]


def _critical(eigs, previous=None):
    """Eigenvalue with positive imaginary part that carries the crossing.

    Without ``previous`` the one with the largest real part; otherwise the
    nearest one to ``previous`` (pairing across small parameter steps).
    """
    up = _upper(eigs)
    if up.size == 0:
        return None
    if previous is None:
        return up[np.argmax(up.real)]
    return up[np.argmin(np.abs(up - previous))]


def hopf_bisect(p: Params, axis, lo, hi, tol=HOPF_TOL, seed=None):
    """Hopf point between ``axis = lo`` and ``axis = hi`` with the other parameters of ``p``.

    Bisects on the largest real part among the non-real eigenvalues of the
    refined equilibrium.  Returns ``None`` when that real part has the same
    sign at both ends, when either end has no endemic equilibrium or no
    complex pair, or when the final crossing eigenvalue is real.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    lo, hi = float(lo), float(hi)
    a = classify(p.replace(**{axis: lo}), seed)
    b = classify(p.replace(**{axis: hi}), seed if a.state is None else a.state)
    if not (a.endemic and b.endemic) or FAILED in (a.cls, b.cls):
        return None
    ca, cb = _critical(a.eigenvalues), _critical(b.eigenvalues)
    if ca is None or cb is None or np.sign(ca.real) == np.sign(cb.real):
        return None
    if ca.real > 0:
        lo, hi, a, b = hi, lo, b, a
    y = a.state
    while abs(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        c = classify(p.replace(**{axis: mid}), y)
        if c.cls == FAILED or not c.endemic:
            return None
        lam = _critical(c.eigenvalues)
        if lam is None:
            return None
        y = c.state
        if lam.real < 0:
            lo = mid
        else:
            hi = mid
    # interpolate the real part linearly across the final bracket
    cl = classify(p.replace(**{axis: lo}), y)
    ch = classify(p.replace(**{axis: hi}), y)
    if FAILED in (cl.cls, ch.cls):
        return None
    lam_l = _critical(cl.eigenvalues)
    lam_h = _critical(ch.eigenvalues, lam_l)
    if lam_l is None or lam_h is None:
        return None
    x = lo if lam_h.real == lam_l.real else lo - lam_l.real * (hi - lo) / (lam_h.real - lam_l.real)
    if not min(lo, hi) <= x <= max(lo, hi):
        x = 0.5 * (lo + hi)
    final = classify(p.replace(**{axis: x}), y)
    if final.cls == FAILED:
        return None
    lam = _critical(final.eigenvalues, lam_l)
    if lam is None:
        return None  # pair collapsed onto the real axis: not a Hopf crossing
    rest = [e for e in final.eigenvalues
            if abs(e - lam) > 1e-12 and abs(e - lam.conjugate()) > 1e-12]
    q = p.replace(**{axis: x})
    return HopfPoint(n=float(q.n), beta=float(q.beta), epsilon=float(q.epsilon),
                     gamma=float(q.gamma), real=float(lam.real), frequency=float(lam.imag),
                     others_max_real=float(max((e.real for e in rest), default=-math.inf)),
                     axis=axis)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepGrid:
    axes: tuple  # (x_axis, y_axis)
    fixed: dict
    x: np.ndarray
    y: np.ndarray
    classes: np.ndarray  # object array, shape (len(y), len(x))
    endemic: np.ndarray
    lead: np.ndarray  # complex leading eigenvalue per cell
    errors: dict = field(default_factory=dict)
    hopf_points: list = field(default_factory=list)
    boundary: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    discontinuities: list = field(default_factory=list)

    @property
    def resolution(self):
        return (len(self.x), len(self.y))

    def cycle_side(self):
        return self.classes == CYCLE_SIDE

    def to_csv(self, path, metadata=None):
        xa, ya = self.axes
        with open(path, "w", newline="") as fh:
            if metadata is not None:
                fh.write("# " + json.dumps(_plain(metadata), sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow([xa, ya, "class", "endemic", "lead_real", "lead_imag"])
            for j, yv in enumerate(self.y):
                for i, xv in enumerate(self.x):
                    lam = self.lead[j, i]
                    w.writerow([repr(float(xv)), repr(float(yv)), self.classes[j, i],
                                int(self.endemic[j, i]), repr(float(lam.real)),
                                repr(float(lam.imag))])

    def hopf_json(self, path, meta=None):
        write_json(path, {"metadata": meta or {}, "axes": list(self.axes), "fixed": self.fixed,
                          "hopf_points": [h.to_dict() for h in self.hopf_points]})

    def to_svg(self, path, title="", meta=None):
        xa, ya = self.axes
        X, Y = np.meshgrid(self.x, self.y)
        cyc = self.cycle_side()
        series = [{"x": X[cyc], "y": Y[cyc], "style": "points", "label": "unstable equilibrium",
                   "color": "#ff9896"}]
        if len(self.boundary):
            closed = np.vstack([self.boundary, self.boundary[:1]])
            series.append({"x": closed[:, 0], "y": closed[:, 1], "label": "Hopf boundary",
                           "color": "#1f77b4"})
        else:
            series.append({"x": [self.x[0], self.x[-1]], "y": [self.y[0], self.y[-1]],
                           "style": "points", "color": "#ffffff"})
        svg_plot(path, series, xlabel=xa, ylabel=ya, title=title, meta=meta)


def _params_at(base, axes, xv, yv):
    return base.replace(**{axes[0]: float(xv), axes[1]: float(yv)})


def sweep_slice(axes, fixed, x_range, y_range, resolution=(100, 100), refine=True,
                continuity_factor=10.0):
    """Classify a grid over two of (n, beta, epsilon) with the third fixed.

    ``fixed`` holds the third axis value and optionally ``gamma``.  With
    ``refine`` each pair of neighbouring endemic cells with different
    labels is resolved by :func:`hopf_bisect`; the Hopf points found form
    the boundary polyline, ordered by angle around their centroid.
    """
    axes = tuple(axes)
    if len(axes) != 2 or axes[0] == axes[1] or any(a not in AXES for a in axes):
        raise PreconditionError(f"axes must be two distinct names from {AXES}")
    third = next(a for a in AXES if a not in axes)
    if third not in fixed:
        raise PreconditionError(f"fixed value for {third!r} required")
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nx < 2 or ny < 2:
        raise PreconditionError("resolution must be at least 2 per axis")
    base_kw = {"beta": 1.0, "gamma": fixed.get("gamma", 1.0), "epsilon": 0.0, "n": 4}
    base_kw[third] = fixed[third]
    base = Params(**base_kw)
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    classes = np.empty((ny, nx), dtype=object)
    endemic = np.zeros((ny, nx), dtype=bool)
    lead = np.full((ny, nx), complex("nan"))
    states, eig_cache = {}, {}
    errors = {}
    grid = SweepGrid(axes, dict(fixed), xs, ys, classes, endemic, lead, errors)
    for j, yv in enumerate(ys):
        prev_state = None
        for i, xv in enumerate(xs):
            try:
                q = _params_at(base, axes, xv, yv)
            except Exception as exc:  # noqa: BLE001
                classes[j, i] = FAILED
                errors[(j, i)] = str(exc)
                continue
            seed = prev_state if prev_state is not None else states.get((j - 1, i))
            c = classify(q, seed)
            if c.cls == FAILED and seed is not None:
                c = classify(q)
            classes[j, i] = c.cls
            endemic[j, i] = c.endemic
            lead[j, i] = c.lead
            if c.error:
                errors[(j, i)] = c.error
            if c.state is not None:
                states[(j, i)] = c.state
                if prev_state is not None and c.eigenvalues is not None:
                    prev_eigs = eig_cache.get((j, i - 1))
                    if prev_eigs is not None:
                        jump = max(np.min(np.abs(prev_eigs - e)) for e in c.eigenvalues)
                        if jump > continuity_factor * (xs[1] - xs[0]):
                            grid.discontinuities.append(((j, i - 1), (j, i), float(jump)))
            prev_state = c.state
            if c.eigenvalues is not None:
                eig_cache[(j, i)] = c.eigenvalues
    if refine:
        _refine_boundary(grid, base, states)
    return grid


def _refine_boundary(grid, base, states):
    xs, ys, cls, end = grid.x, grid.y, grid.classes, grid.endemic
    ax, ay = grid.axes
    pts = []
    for j in range(len(ys)):
        for i in range(len(xs)):
            for dj, di in ((0, 1), (1, 0)):
                j2, i2 = j + dj, i + di
                if j2 >= len(ys) or i2 >= len(xs):
                    continue
                if not (end[j, i] and end[j2, i2]):
                    continue
                if {cls[j, i], cls[j2, i2]} != {STABLE, CYCLE_SIDE}:
                    continue
                if di:
                    q = _params_at(base, grid.axes, xs[i], ys[j])
                    h = hopf_bisect(q, ax, xs[i], xs[i2], seed=states.get((j, i)))
                else:
                    q = _params_at(base, grid.axes, xs[i], ys[j])
                    h = hopf_bisect(q, ay, ys[j], ys[j2], seed=states.get((j, i)))
                if h is not None:
                    grid.hopf_points.append(h)
                    pts.append((getattr(h, ax), getattr(h, ay)))
    if pts:
        P = np.array(pts)
        c = P.mean(axis=0)
        span = np.ptp(P, axis=0)
        span[span == 0] = 1.0
        ang = np.arctan2((P[:, 1] - c[1]) / span[1], (P[:, 0] - c[0]) / span[0])
        grid.boundary = P[np.argsort(ang, kind="stable")]


def max_unstable_epsilon(n, beta_range=(0.0, 15.0), eps_range=(1e-3, 0.25), resolution=(100, 100),
                         gamma=1.0, tol=1e-6):
    """Largest epsilon at which some beta in ``beta_range`` destabilises the equilibrium.

    Scans a (beta, epsilon) slice at degree ``n`` and refines the top edge of
    the unstable region by bisection in epsilon.  Returns ``(eps_max, beta)``
    or ``(0.0, None)`` when no cell is unstable.
    """
    grid = sweep_slice(("beta", "epsilon"), {"n": n, "gamma": gamma}, beta_range, eps_range,
                       resolution, refine=False)
    cyc = grid.cycle_side()
    if not cyc.any():
        return 0.0, None
    best = (0.0, None)
    rows, cols = np.nonzero(cyc)
    for i in np.unique(cols):
        j = rows[cols == i].max()
        beta = float(grid.x[i])
        lo = float(grid.y[j])
        if j + 1 < len(grid.y):
            h = hopf_bisect(Params(beta, gamma, lo, n), "epsilon", lo, float(grid.y[j + 1]), tol)
            top = h.epsilon if h is not None else lo
        else:
            top = lo
        if top > best[0]:
            best = (top, beta)
    return best
