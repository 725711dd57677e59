"""Adaptive explicit Runge-Kutta integration with dense output and events.

The scheme is the Dormand-Prince 5(4) pair with its 4th-order continuous
extension and a proportional-integral step controller.  Stepping happens
in chunks inside :func:`_advance`, a compiled kernel when numba is on;
event detection and bookkeeping run in Python between chunks.
"""
import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import model
from ._accel import NUMBA_ENABLED, kernel, python_impl
from .errors import PreconditionError, StiffnessError
from .model import Params

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                          22 / 525, -1 / 40)
# dense output coefficients
D1, D3, D4, D5, D6, D7 = (-12715105075 / 11282082432, 87487479700 / 32700410799,
                          -10690763975 / 1880347072, 701980252875 / 199316789632,
                          -1453857185 / 822651844, 69997945 / 29380423)

# step controller (PI, exponents 0.17 / 0.04)
SAFETY = 0.9
PI_BETA = 0.04
PI_ALPHA = 0.2 - 0.75 * PI_BETA
FAC_MIN, FAC_MAX = 0.2, 10.0
H_UNDERFLOW = 1e-14
MAX_SIGN_RETRIES = 4

STATUS_RUNNING, STATUS_DONE, STATUS_UNDERFLOW = 0, 1, 2

# Built-in right-hand sides are passed to the compiled stepper as integer
# codes; passing dispatchers as arguments defeats numba's on-disk cache.
_MODEL_KERNELS = (model.reduced_rhs_kernel, model.layer_rhs_kernel,
                  model.slow_rhs_kernel, model.full_rhs_kernel)
_KERNEL_CODE = {id(k): i for i, k in enumerate(_MODEL_KERNELS)}


def _call(fun, t, y, p):
    if isinstance(fun, (int, np.integer)):
        return python_impl(_MODEL_KERNELS[fun])(t, y, p)
    return fun(t, y, p)


if NUMBA_ENABLED:
    from numba import types
    from numba.extending import overload

    @overload(_call)
    def _call_compiled(fun, t, y, p):
        if isinstance(fun, types.Integer):
            reduced, layer, slow, full8 = _MODEL_KERNELS

            def impl(fun, t, y, p):
                if fun == 0:
                    return reduced(t, y, p)
                if fun == 1:
                    return layer(t, y, p)
                if fun == 2:
                    return slow(t, y, p)
                return full8(t, y, p)
            return impl
        return None


@kernel
def _advance(fun, p, t, y, f, h, t_end, rtol, atol, max_step, err_old,
             max_accept, T_out, Y_out, Q_out, nonneg):
    """Take up to ``max_accept`` accepted steps towards ``t_end``.

    Accepted step endpoints go to ``T_out``/``Y_out``; ``Q_out[i]`` holds the
    five dense-output vectors of the step that ends at ``T_out[i]``.  With
    ``nonneg`` a step that takes a positive component below zero is retried
    with half the step; if ``MAX_SIGN_RETRIES`` halvings do not help, the
    original step is redone and the component clamped to zero, as it is for
    a component already at zero.  Tiny
    densities far below ``atol`` are thus kept positive where the step size
    can resolve them, and round-off at the boundary cannot stall the run.
    """
    dim = y.shape[0]
    count = 0
    status = STATUS_RUNNING
    y_new = np.empty(dim)
    retries = 0
    h_first = h
    while count < max_accept:
        if t >= t_end:
            status = STATUS_DONE
            break
        if h > max_step:
            h = max_step
        last = False
        if t + 1.01 * h >= t_end:
            h = t_end - t
            last = True
        if h < H_UNDERFLOW:
            if last:
                # remainder below resolution: snap to the end point
                t = t_end
                status = STATUS_DONE
                break
            status = STATUS_UNDERFLOW
            break
        k1 = f
        k2 = _call(fun, t + C2 * h, y + h * (A21 * k1), p)
        k3 = _call(fun, t + C3 * h, y + h * (A31 * k1 + A32 * k2), p)
        k4 = _call(fun, t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3), p)
        k5 = _call(fun, t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4), p)
        k6 = _call(fun, t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5), p)
        for i in range(dim):
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i]
                                   + A75 * k5[i] + A76 * k6[i])
        k7 = _call(fun, t + h, y_new, p)
        err = 0.0
        finite = True
        for i in range(dim):
            if not (math.isfinite(y_new[i]) and math.isfinite(k7[i])):
                finite = False
                break
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                     + E6 * k6[i] + E7 * k7[i])
            sk = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            err += (e / sk) ** 2
        if not finite:
            h = h * FAC_MIN
            continue
        err = math.sqrt(err / dim)
        if nonneg and err <= 1.0:
            crossed = False
            clamped = False
            for i in range(dim):
                if y_new[i] < 0.0 <= y[i]:
                    if y[i] > 0.0 and 0 <= retries < MAX_SIGN_RETRIES:
                        crossed = True
                        break
                    y_new[i] = 0.0
                    clamped = True
            if crossed:
                if retries == 0:
                    h_first = h
                retries += 1
                if retries == MAX_SIGN_RETRIES:
                    # the sign is driven by round-off, not by an unresolved
                    # decay: redo the original step and clamp instead
                    retries = -1
                    h = h_first
                else:
                    h = 0.5 * h
                continue
            if clamped:
                k7 = _call(fun, t + h, y_new, p)
        if err <= 1.0:
            retries = 0
            fac = max(err, 1e-10) ** PI_ALPHA / err_old ** PI_BETA
            fac = min(1.0 / FAC_MIN, max(1.0 / FAC_MAX, fac / SAFETY))
            err_old = max(err, 1e-4)
            for i in range(dim):
                ydiff = y_new[i] - y[i]
                bspl = h * k1[i] - ydiff
                Q_out[count, 0, i] = y[i]
                Q_out[count, 1, i] = ydiff
                Q_out[count, 2, i] = bspl
                Q_out[count, 3, i] = ydiff - h * k7[i] - bspl
                Q_out[count, 4, i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i]
                                          + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                Y_out[count, i] = y_new[i]
            t = t_end if last else t + h
            T_out[count] = t
            y = y_new.copy()
            f = k7
            count += 1
            h = h / fac
        else:
            fac = max(err, 1e-10) ** PI_ALPHA / SAFETY
            h = h / min(1.0 / FAC_MIN, fac)
    return count, status, t, y, f, h, err_old


def _dense_eval(q, t0, t1, t):
    h = t1 - t0
    theta = (t - t0) / h
    theta1 = 1.0 - theta
    return q[0] + theta * (q[1] + theta1 * (q[2] + theta * (q[3] + theta1 * q[4])))


@dataclass
class Event:
    """Threshold crossing of ``fn(t, y)``.

    ``direction`` is -1 for downward crossings only, +1 for upward, 0 for both.
    """

    fn: Callable
    direction: int = 0
    terminal: bool = False
    name: str = ""


def threshold_event(component, level, direction=-1, terminal=True, name=""):
    """Event for ``y[component]`` crossing ``level``."""
    return Event(lambda t, y: y[component] - level, direction, terminal,
                 name or f"y{component}={level:g}")


@dataclass
class IntegrationConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = math.inf
    max_time: float = 100.0
    events: Sequence[Event] = ()
    first_step: Optional[float] = None
    dense: bool = True
    chunk: int = 512
    # None: on for the model systems (their states are densities), off otherwise
    nonnegative: Optional[bool] = None

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise PreconditionError("tolerances must be positive")
        if not self.max_time > 0:
            raise PreconditionError("max_time must be positive")
        if not self.max_step > 0:
            raise PreconditionError("max_step must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    regime: str = "full"
    names: tuple = ()
    events: list = field(default_factory=list)
    status: str = "completed"
    dense: Optional[np.ndarray] = None
    attractor: object = None

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.states[-1]

    def component(self, name):
        return self.states[:, self.names.index(name)]

    def sol(self, t):
        """Dense-output evaluation at time(s) ``t`` inside the integration span."""
        if self.dense is None:
            raise ValueError("trajectory was integrated without dense output")
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((ts.size, self.states.shape[1]))
        idx = np.searchsorted(self.times, ts, side="left")
        for j, (tj, i) in enumerate(zip(ts, idx)):
            if i == 0:
                out[j] = self.states[0]
            elif i >= len(self.times):
                out[j] = self.states[-1]
            else:
                out[j] = _dense_eval(self.dense[i - 1], self.times[i - 1], self.times[i], tj)
        return out[0] if scalar else out

    def to_csv(self, path, metadata=None):
        write_trajectory_csv(self, path, metadata)


def write_trajectory_csv(traj, path, metadata=None, t_name="t"):
    with open(path, "w", newline="") as fh:
        if metadata is not None:
            fh.write("# " + json.dumps(metadata, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow([t_name, *traj.names])
        for t, row in zip(traj.times, traj.states):
            writer.writerow([repr(float(t)), *(repr(float(v)) for v in row)])


def _initial_step(fun, p, t0, y0, f0, rtol, atol, max_step):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, max_step)
    y1 = y0 + h0 * f0
    f1 = _call(fun, t0 + h0, y1, p)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max_step)


def integrate(rhs, y0, config: IntegrationConfig = None, args=None, t0=0.0,
              names=None, regime="full"):
    """Integrate ``y' = rhs(t, y, args)`` from ``t0`` to ``t0 + config.max_time``.

    ``rhs`` is called as ``rhs(t, y, args)`` when ``args`` is given (the form
    used by the model kernels, with ``args`` a float array) and as
    ``rhs(t, y)`` otherwise.  Terminal events stop the run with status
    ``"event"``; if terminal events were requested but none fired the status
    is ``"timeout"``.
    """
    config = config or IntegrationConfig()
    y0 = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise PreconditionError("initial state must be finite")
    if args is None:
        py_rhs = rhs
        fun = lambda t, y, p: np.asarray(py_rhs(t, y), dtype=float)  # noqa: E731
        p = np.zeros(0)
    else:
        fun = _KERNEL_CODE.get(id(rhs), rhs)
        p = np.asarray(args, dtype=float)
    if isinstance(fun, int):
        advance = _advance
    else:
        advance = python_impl(_advance)

    dim = y0.size
    t_end = t0 + config.max_time
    f = np.asarray(_call(fun, t0, y0, p), dtype=float)
    h = config.first_step or _initial_step(fun, p, t0, y0, f, config.rel_tol,
                                           config.abs_tol, config.max_step)
    chunk = max(8, int(config.chunk))
    T_buf = np.empty(chunk)
    Y_buf = np.empty((chunk, dim))
    Q_buf = np.empty((chunk, 5, dim))

    times, states, denses = [np.array([t0])], [y0[None, :]], []
    events = list(config.events)
    g_prev = [ev.fn(t0, y0) for ev in events]
    hits = []
    status = "completed"
    t, y, err_old = t0, y0.copy(), 1e-4
    while True:
        count, code, t, y, f, h, err_old = advance(
            fun, p, t, y, f, h, t_end, config.rel_tol, config.abs_tol,
            config.max_step, err_old, chunk, T_buf, Y_buf, Q_buf, bool(config.nonnegative))
        Tc, Yc, Qc = T_buf[:count].copy(), Y_buf[:count].copy(), Q_buf[:count].copy()
        stop_at = None
        if events and count:
            stop_at = _scan_events(events, g_prev, times[-1][-1], Tc, Yc, Qc, hits)
        if stop_at is not None:
            i, t_hit, y_hit = stop_at
            Tc, Yc, Qc = Tc[:i + 1].copy(), Yc[:i + 1].copy(), Qc[:i + 1].copy()
            t_prev = times[-1][-1] if i == 0 else Tc[i - 1]
            if t_hit > t_prev:
                Tc[i], Yc[i] = t_hit, y_hit
                Qc[i] = _truncate_dense(Qc[i], t_prev, T_buf[i], t_hit, y_hit)
            else:
                Tc, Yc, Qc = Tc[:i], Yc[:i], Qc[:i]
            status = "event"
        times.append(Tc)
        states.append(Yc)
        if config.dense:
            denses.append(Qc)
        if stop_at is not None:
            break
        if code == STATUS_UNDERFLOW:
            raise StiffnessError(
                f"step size underflow (h < {H_UNDERFLOW:g}) at t={t!r}; last state {y!r}",
                t=t, state=y)
        if code == STATUS_DONE:
            break
    if status != "event" and any(ev.terminal for ev in events):
        status = "timeout"

    T = np.concatenate(times)
    Y = np.concatenate(states)
    dense = np.concatenate(denses) if config.dense and denses else None
    if dense is not None and len(dense) != len(T) - 1:
        dense = None
    return Trajectory(T, Y, regime=regime,
                      names=tuple(names) if names else tuple(f"y{i}" for i in range(dim)),
                      events=hits, status=status, dense=dense)


def _truncate_dense(q, t0, t1, t_hit, y_hit):
    """Dense coefficients for the sub-step [t0, t_hit] of a step [t0, t1].

    The restriction of a quartic is a quartic, so resampling the
    interpolant at five nodes and converting back is exact up to rounding.
    """
    thetas = np.linspace(0.0, 1.0, 5)
    pts = np.array([_dense_eval(q, t0, t1, t0 + th * (t_hit - t0)) for th in thetas])
    pts[-1] = y_hit
    a = np.linalg.solve(np.vander(thetas, 5, increasing=True), pts)
    # power-basis coefficients a0..a4 to the nested form used by _dense_eval
    r4 = a[4]
    r3 = -a[3] - 2.0 * a[4]
    r2 = -a[2] - a[3] - a[4]
    r1 = a[1] + a[2] + a[3] + a[4]
    return np.array([a[0], r1, r2, r3, r4])


def _scan_events(events, g_prev, t_start, Tc, Yc, Qc, hits):
    """Record event crossings in a chunk; return the first terminal hit."""
    t_left = t_start
    for i in range(len(Tc)):
        first_terminal = None
        for k, ev in enumerate(events):
            g_new = ev.fn(Tc[i], Yc[i])
            g_old = g_prev[k]
            crossed = (g_old > 0 >= g_new) if ev.direction < 0 else (
                (g_old < 0 <= g_new) if ev.direction > 0 else
                (g_old > 0 >= g_new) or (g_old < 0 <= g_new))
            g_prev[k] = g_new
            if not crossed:
                continue
            t_hit = _locate(ev.fn, Qc[i], t_left, Tc[i], g_old)
            hits.append((t_hit, k))
            if ev.terminal and (first_terminal is None or t_hit < first_terminal[0]):
                first_terminal = (t_hit, k)
        if first_terminal is not None:
            t_hit = first_terminal[0]
            y_hit = _dense_eval(Qc[i], t_left, Tc[i], t_hit) if t_hit < Tc[i] else Yc[i]
            # drop non-terminal hits recorded after the stop
            hits[:] = [hv for hv in hits if hv[0] <= t_hit]
            return i, t_hit, y_hit
        t_left = Tc[i]
    return None


def _locate(fn, q, t0, t1, g0, tol=1e-12):
    """Bisection on the dense interpolant for the sign change of ``fn``."""
    a, b = t0, t1
    ga = g0
    while b - a > tol * max(1.0, abs(b)):
        m = 0.5 * (a + b)
        gm = fn(m, _dense_eval(q, t0, t1, m))
        if (gm > 0) == (ga > 0) and gm != 0:
            a, ga = m, gm
        else:
            b = m
    return b


# ---------------------------------------------------------------------------
# model-specific drivers

_SYSTEMS = {
    "full": (model.reduced_rhs_kernel, model.REDUCED_NAMES),
    "layer": (model.layer_rhs_kernel, model.REDUCED_NAMES),
    "slow": (model.slow_rhs_kernel, model.SLOW_NAMES),
}


def integrate_system(system, p: Params, initial, config: IntegrationConfig = None):
    """Integrate one of the model systems: ``full``, ``layer`` or ``slow``.

    ``slow`` runs in slow time tau.  ``full`` is the reduced 5-dimensional
    system with waning; ``layer`` sets the waning terms to zero.
    """
    if system not in _SYSTEMS:
        raise PreconditionError(f"unknown system {system!r}; expected one of {sorted(_SYSTEMS)}")
    rhs, names = _SYSTEMS[system]
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (len(names),):
        raise PreconditionError(f"{system} system needs {len(names)} components")
    if system != "slow" and not model.in_delta(initial, p.n):
        raise PreconditionError(f"initial state {initial} outside the admissible set")
    regime = {"full": "full", "layer": "fast", "slow": "slow"}[system]
    config = config or IntegrationConfig()
    if config.nonnegative is None:
        config = replace(config, nonnegative=True)
    return integrate(rhs, initial, config, args=p.as_array(), names=names, regime=regime)


def stiff_config(p: Params, max_time=None, **overrides):
    """Settings for long runs of the full system at small epsilon.

    Infected densities sit far below ``abs_tol`` during the slow passage, so
    error control cannot see them; the step cap keeps ``h * (beta + gamma)``
    small enough that their exponential decay and regrowth rates are
    resolved, which the entry-exit timing depends on.
    """
    if max_time is None:
        max_time = 400.0 / p.epsilon if p.epsilon > 0 else 200.0
    cfg = dict(rel_tol=1e-9, abs_tol=1e-11, max_step=0.5 / (p.beta + p.gamma),
               max_time=max_time, dense=False, chunk=4096)
    cfg.update(overrides)
    return IntegrationConfig(**cfg)


def integrate_full_stiff(p: Params, initial, config: IntegrationConfig = None,
                         classify=True, tail_fraction=0.2):
    """Long run of the full reduced system; tail classified when ``classify``."""
    config = config or stiff_config(p)
    traj = integrate_system("full", p, initial, config)
    if classify:
        from .singular_orbit import detect_attractor
        traj.attractor = detect_attractor(traj, p, tail_fraction=tail_fraction)
    return traj
