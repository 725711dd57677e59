"""Layer-flow landing points, the explicit slow flow and entry-exit timing.

Conventions: ``S_inf`` / ``SS_inf`` is where a layer orbit lands on the
critical manifold, which is also the entry point of the slow passage;
``tau`` is slow time.  The threshold quantities here use the epsilon = 0
limit, ``L = n (beta + gamma) / (beta (n - 1))`` and ``1/R1 = L / n``.
"""
import json
import math
import os
from dataclasses import asdict, dataclass
from itertools import count

import numpy as np
from scipy import integrate as sp_integrate

from .errors import (ConsistencyError, ConvergenceError, DegenerateEntryError,
                     ModelDomainError, PreconditionError)
from .model import Params, SlowPoint, geometry

VERIFY_ENV = "PAIRSIRS_VERIFY_EXITS"
VERIFY_EVERY = 100
CONSISTENCY_TOL = 1e-6

_verify_counter = count()


def _always_verify():
    return os.environ.get(VERIFY_ENV, "0").strip().lower() not in {"", "0", "false", "no", "off"}


# ---------------------------------------------------------------------------
# layer flow


def constant_of_motion(S, SS, n):
    """``V = ln SS - (2 (n - 1) / n) ln S``, conserved by the layer flow."""
    S = np.asarray(S, dtype=float)
    SS = np.asarray(SS, dtype=float)
    if np.any(S <= 0) or np.any(SS <= 0):
        raise ModelDomainError("constant of motion needs S > 0 and SS > 0")
    out = np.log(SS) - (2.0 * (n - 1) / n) * np.log(S)
    return out if out.ndim else float(out)


def ss_infinity(S0, SS0, S_inf, n):
    """Landing value of SS for a layer orbit from ``(S0, SS0)`` that lands at ``S_inf``."""
    if not S0 > 0:
        raise ModelDomainError("S0 must be positive")
    if S_inf < 0:
        raise ModelDomainError("S_inf must be non-negative")
    return SS0 * (S_inf / S0) ** ((2.0 * n - 2.0) / n)


def _landing_bracket(S0, SS0, p: Params):
    if not (0 < S0 <= 1):
        raise PreconditionError(f"S0={S0} must lie in (0, 1]")
    if SS0 > p.n * S0 * (1 + 1e-12):
        raise PreconditionError(f"SS0={SS0} exceeds n*S0; not an admissible state")
    L = geometry(p).slope
    if not (S0 * p.n / L > 1):
        raise PreconditionError(f"R1*S0 = {S0 * p.n / L:.6g} <= 1: no outbreak from this point")
    if not SS0 > L * S0:
        raise PreconditionError(
            f"SS0={SS0} is not above the loss-of-hyperbolicity line (L*S0={L * S0})")
    return L, (L * S0 / SS0) ** (p.n / (p.n - 2.0)) * S0


def _bisect_newton(f, df, lo, hi, rtol=1e-6, maxiter=60):
    """Root of ``f`` on ``[lo, hi]`` with ``f(lo) < 0 < f(hi)``.

    Bisection down to relative width ``rtol``, then Newton steps kept inside
    the bracket until they stop changing the iterate.
    """
    flo, fhi = f(lo), f(hi)
    if not (flo < 0 < fhi):
        raise PreconditionError(
            f"root bracket [{lo}, {hi}] has no sign change (f={flo}, {fhi})")
    a, b = lo, hi
    while b - a > rtol * b:
        m = 0.5 * (a + b)
        if f(m) < 0:
            a = m
        else:
            b = m
    x = 0.5 * (a + b)
    for _ in range(maxiter):
        fx = f(x)
        if fx == 0:
            return x
        if fx < 0:
            a = x
        else:
            b = x
        d = df(x)
        x_new = x - fx / d if d != 0 else 0.5 * (a + b)
        if not (a < x_new < b):
            x_new = 0.5 * (a + b)
        if abs(x_new - x) <= 4 * np.finfo(float).eps * abs(x):
            return x_new
        x = x_new
    return x


def landing_function_H(x, S0, SS0, p: Params):
    n, k = p.n, (p.beta + p.gamma) / p.beta
    return (n * k * (x ** (1 / n) - S0 ** (1 / n))
            - SS0 * (S0 ** (2 / n - 2) * x ** (1 - 1 / n) - S0 ** (1 / n - 1)))


def _dH(x, S0, SS0, p: Params):
    n, k = p.n, (p.beta + p.gamma) / p.beta
    return k * x ** (1 / n - 1) - SS0 * S0 ** (2 / n - 2) * (1 - 1 / n) * x ** (-1 / n)


def entry_root_H(S0, SS0, p: Params):
    """Landing value S_inf of the layer orbit started next to ``(S0, SS0)`` on the critical manifold.

    Unique root of H in (0, S*], where S* is the maximiser of H.
    """
    _, s_star = _landing_bracket(S0, SS0, p)
    return _bisect_newton(lambda x: landing_function_H(x, S0, SS0, p),
                          lambda x: _dH(x, S0, SS0, p), 0.0, s_star)


def landing_function_G(x, S0, p: Params):
    """H divided by n, specialised to starts on the parabola SS0 = n S0^2."""
    n, k = p.n, (p.beta + p.gamma) / p.beta
    return (k * (x ** (1 / n) - S0 ** (1 / n)) - S0 ** (2 / n) * x ** (1 - 1 / n)
            + S0 ** (1 + 1 / n))


def entry_root_G(S0, p: Params):
    """Landing value S_inf for a layer orbit that starts on the parabola."""
    n = p.n
    _, s_star = _landing_bracket(S0, n * S0 ** 2, p)
    k = (p.beta + p.gamma) / p.beta

    def dG(x):
        return k / n * x ** (1 / n - 1) - S0 ** (2 / n) * (1 - 1 / n) * x ** (-1 / n)

    return _bisect_newton(lambda x: landing_function_G(x, S0, p), dG, 0.0, s_star)


# ---------------------------------------------------------------------------
# slow flow


def slow_solution(entry, tau, n):
    """Closed-form slow flow from ``entry = (S, SS)`` after slow time ``tau`` (scalar or array)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ModelDomainError("tau must be non-negative")
    A = entry[0] - 1.0
    B = entry[1] - n
    w = np.exp(-tau)
    S = A * w + 1.0
    SS = 2.0 * A * n * w * (1.0 - w) + B * w * w + n
    if S.ndim == 0:
        return SlowPoint(float(S), float(SS))
    return SlowPoint(S, SS)


def parabola_distance(point, n):
    return point[1] - n * point[0] ** 2


class _SlowRatio:
    """SS/S along the slow flow as ``a w + q + r / (1 + A w)`` with ``w = e^{-tau}``.

    Finite at an entry with S = 0 (where the remainder coefficient r is 0),
    which the plain ratio is not.
    """

    def __init__(self, entry, n):
        A = entry[0] - 1.0
        if A == 0.0:
            raise DegenerateEntryError("entry with S = 1 never leaves S = 1; exit time undefined")
        B = entry[1] - n
        c2 = B - 2.0 * A * n
        self.A, self.n = A, n
        self.a = c2 / A
        self.q = 2.0 * n - c2 / (A * A)
        self.r = (c2 - n * A * A) / (A * A)

    def __call__(self, tau):
        w = np.exp(-np.asarray(tau, dtype=float))
        out = self.a * w + self.q
        if self.r != 0.0:
            out = out + self.r / (1.0 + self.A * w)
        return out

    def integral(self, T):
        """Closed-form integral of SS/S over [0, T]."""
        A = self.A
        out = self.a * -np.expm1(-T) + self.n * T
        if self.r != 0.0:
            out += self.r * (np.log1p(A * np.exp(-T)) - np.log1p(A))
        return out


def slow_lambda5(entry, tau, p: Params):
    """Transverse eigenvalue along the slow flow from ``entry``."""
    ratio = _SlowRatio(entry, p.n)
    return p.beta * (p.n - 1) / p.n * ratio(tau) - (p.gamma + p.beta)


def _lambda5_direct(entry, tau, p: Params):
    pt = slow_solution(entry, tau, p.n)
    return p.beta * (p.n - 1) / p.n * pt.SS / pt.S - (p.gamma + p.beta)


def accumulated_lambda5(entry, T, p: Params):
    """``int_0^T lambda5 dtau`` along the slow flow, closed form."""
    ratio = _SlowRatio(entry, p.n)
    return p.beta * (p.n - 1) / p.n * ratio.integral(T) - (p.gamma + p.beta) * T


def accumulated_lambda5_quad(entry, T, p: Params):
    """Same integral by adaptive Gauss-Kronrod quadrature of the direct ratio SS/S."""
    val, _ = sp_integrate.quad(lambda t: _lambda5_direct(entry, t, p), 0.0, T,
                               epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


@dataclass
class EntryExitRecord:
    entry: SlowPoint
    exit_time: float
    exit: SlowPoint
    method: str  # "closed-form" or "quadrature"
    verified: bool = False

    def to_dict(self):
        d = asdict(self)
        d["entry"] = {"S": float(self.entry[0]), "SS": float(self.entry[1])}
        d["exit"] = {"S": float(self.exit[0]), "SS": float(self.exit[1])}
        d["exit_time"] = float(self.exit_time)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_exit_preconditions(entry, p: Params):
    if not (0.0 <= entry[0] <= 1.0 and 0.0 <= entry[1] <= p.n * entry[0] * (1 + 1e-12) + 1e-15):
        raise PreconditionError(f"entry {tuple(entry)} is not a point of the critical manifold")
    if entry[0] == 1.0:
        raise DegenerateEntryError("entry with S = 1 never leaves S = 1; exit time undefined")
    if not (p.n > 2 and p.beta * (p.n - 2) > p.gamma):
        raise PreconditionError("R0 <= 1: the slow flow never re-enters the repelling region")
    lam0 = float(slow_lambda5(entry, 0.0, p))
    if not lam0 < 0:
        raise PreconditionError(f"lambda5 = {lam0:.6g} >= 0 at the entry point; not attracting")


def _first_sign_change(f, lo, hi, grid=64):
    """First interval of a uniform grid on [lo, hi] where f goes from <0 to >=0."""
    xs = np.linspace(lo, hi, grid + 1)
    prev = xs[0]
    for x in xs[1:]:
        if f(x) >= 0:
            return prev, x
        prev = x
    return None


def _bisect_sign(f, a, b, tol):
    while b - a > tol:
        m = 0.5 * (a + b)
        if f(m) < 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def _exit_bracket(f, start, p):
    """Grow an upper bound from ``start`` until ``f`` turns non-negative."""
    hi = max(2.0 * start, 1.0)
    for _ in range(60):
        if f(hi) >= 0:
            bracket = _first_sign_change(f, start, hi)
            if bracket is not None:
                return bracket
        hi *= 2.0
    raise ConvergenceError("no exit found: accumulated lambda5 stays negative")


def exit_time(entry, p: Params, verify=None):
    """Slow time at which the accumulated transverse contraction is undone.

    Solves ``int_0^T lambda5 dtau = 0`` for the first ``T`` beyond the
    crossing of the loss-of-hyperbolicity line, using the closed-form
    integral.  The result is cross-checked against adaptive quadrature on
    every call when ``PAIRSIRS_VERIFY_EXITS`` is set, otherwise on one call
    in a hundred; ``verify`` forces the choice.
    """
    entry = SlowPoint(float(entry[0]), float(entry[1]))
    _check_exit_preconditions(entry, p)

    lam = lambda t: float(slow_lambda5(entry, t, p))  # noqa: E731
    lo, hi = _exit_bracket(lam, 0.0, p)
    tau0 = _bisect_sign(lam, lo, hi, 1e-13)
    F = lambda t: float(accumulated_lambda5(entry, t, p))  # noqa: E731
    lo, hi = _exit_bracket(F, tau0, p)
    T = _bisect_sign(F, lo, hi, 1e-13 * max(1.0, hi))

    if verify is None:
        verify = _always_verify() or next(_verify_counter) % VERIFY_EVERY == 0
    if verify:
        q = accumulated_lambda5_quad(entry, T, p)
        if abs(q) > CONSISTENCY_TOL:
            raise ConsistencyError(
                f"closed-form exit time {T!r} leaves quadrature integral {q!r} "
                f"for entry {tuple(entry)}")
    return EntryExitRecord(entry, T, slow_solution(entry, T, p.n), "closed-form", bool(verify))


def exit_time_quadrature(entry, p: Params):
    """Exit time with the integral of lambda5 evaluated by quadrature only."""
    entry = SlowPoint(float(entry[0]), float(entry[1]))
    _check_exit_preconditions(entry, p)
    lam = lambda t: float(_lambda5_direct(entry, t, p)) if t > 0 else float(  # noqa: E731
        slow_lambda5(entry, 0.0, p))
    lo, hi = _exit_bracket(lam, 0.0, p)
    tau0 = _bisect_sign(lam, lo, hi, 1e-13)
    F = lambda t: accumulated_lambda5_quad(entry, t, p)  # noqa: E731
    lo, hi = _exit_bracket(F, tau0, p)
    # secant/bisection hybrid keeps the number of quadratures small
    flo, fhi = F(lo), F(hi)
    for _ in range(200):
        m = hi - fhi * (hi - lo) / (fhi - flo) if fhi != flo else 0.5 * (lo + hi)
        if not (lo < m < hi):
            m = 0.5 * (lo + hi)
        fm = F(m)
        if fm < 0:
            lo, flo = m, fm
        else:
            hi, fhi = m, fm
        if abs(fm) < 1e-13 or hi - lo < 1e-13:
            break
    T = m
    return EntryExitRecord(entry, T, slow_solution(entry, T, p.n), "quadrature", True)


# ---------------------------------------------------------------------------
# entry-exit map restricted to the parabola


def parabola_exponent(p: Params):
    """``C = ((n - 2) beta - gamma) / (beta (n - 1))``; ``1 - C = 1/R1`` at epsilon = 0."""
    return ((p.n - 2) * p.beta - p.gamma) / (p.beta * (p.n - 1))


def _log_h(x, C):
    return C * math.log1p(-x) + x


def parabola_exit(S_entry, p: Params):
    """Exit point on the parabola for a slow passage entering it at ``S_entry``.

    Solves ``h(x) = h(S_entry)`` with ``h(x) = (1 - x)^C e^x`` for the root
    above ``1 - C``, the maximiser of ``h``.
    """
    C = parabola_exponent(p)
    if not C > 0:
        raise ModelDomainError("R0 <= 1: parabola exit undefined")
    x_turn = 1.0 - C
    if not (0.0 <= S_entry < x_turn):
        raise ModelDomainError(
            f"entry S={S_entry} is not in the attracting part [0, {x_turn:.6g}) of the parabola")
    target = _log_h(S_entry, C)
    g = lambda x: target - _log_h(x, C)  # noqa: E731  (negative at x_turn, +inf at 1)
    a, b = x_turn, 1.0
    while b - a > 1e-15:
        m = 0.5 * (a + b)
        if m == a or m == b:
            break
        if g(m) < 0:
            a = m
        else:
            b = m
    x = 0.5 * (a + b)
    return SlowPoint(x, p.n * x * x)


def parabola_exit_time(S_entry, S_exit):
    """Slow time from ``S_entry`` to ``S_exit`` along S' = 1 - S."""
    return math.log((1.0 - S_entry) / (1.0 - S_exit))
