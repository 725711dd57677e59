"""Pair-approximation SIRS model on an n-regular network.

States are plain float arrays.  The reduced state holds the five retained
coordinates ``(S, I, SS, SI, II)``; the full state appends the three edge
densities that the conservation identities determine::

    SS + SI + SR = n S
    SI + II + IR = n I
    SR + IR + RR = n (1 - S - I)

Node densities are normalised by N and edge counts by N as well, so edge
components live in ``[0, n]``.  Kernels take the parameters packed as
``p = [beta, gamma, epsilon, n]``.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._accel import kernel
from .errors import ModelDomainError, PreconditionError

REDUCED_NAMES = ("S", "I", "SS", "SI", "II")
FULL_NAMES = ("S", "I", "SS", "SI", "SR", "II", "IR", "RR")
SLOW_NAMES = ("S", "SS")

# below this S the ratios SI/S, SS/S, SR/S are clamped to [0, n]
S_FLOOR = 1e-12


@dataclass(frozen=True)
class Params:
    """Model rates and degree.

    ``n`` may be non-integer: the closed ODEs are well defined for real
    ``n > 2`` and the bifurcation sweeps use that.  Only the network
    simulator insists on an integer degree.
    """

    beta: float
    gamma: float = 1.0
    epsilon: float = 0.0
    n: float = 4

    def __post_init__(self):
        for name in ("beta", "gamma", "epsilon", "n"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ModelDomainError(f"{name} must be finite, got {v}")
        if self.gamma <= 0:
            raise ModelDomainError(f"gamma must be positive, got {self.gamma}")
        if self.beta < 0 or self.epsilon < 0:
            raise ModelDomainError("beta and epsilon must be non-negative")
        if self.n < 2:
            raise ModelDomainError(f"degree n must be at least 2, got {self.n}")

    def as_array(self):
        return np.array([self.beta, self.gamma, self.epsilon, float(self.n)])

    def replace(self, **changes):
        fields = dict(beta=self.beta, gamma=self.gamma, epsilon=self.epsilon, n=self.n)
        fields.update(changes)
        return Params(**fields)

    @property
    def epidemic(self):
        """True when R0 > 1 (requires n > 2)."""
        return self.n > 2 and self.beta * (self.n - 2) > self.gamma

    @property
    def fast_slow(self):
        return self.epsilon < min(self.beta, self.gamma)


class SlowPoint(NamedTuple):
    """A point on the critical manifold, where I = SI = II = 0."""

    S: float
    SS: float


class EigenData(NamedTuple):
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    lambda5: float


# ---------------------------------------------------------------------------
# kernels


@kernel
def _ratio(x, s, n):
    if s >= S_FLOOR:
        return x / s
    if x <= 0.0:
        return 0.0
    if s <= 0.0:
        return n
    r = x / s
    return r if r < n else n


@kernel
def reduced_rhs_kernel(t, y, p):
    beta, gamma, eps, n = p[0], p[1], p[2], p[3]
    k = (n - 1.0) / n
    S, I, SS, SI, II = y[0], y[1], y[2], y[3], y[4]
    u = _ratio(SI, S, n)
    v = _ratio(SS, S, n)
    out = np.empty(5)
    out[0] = -beta * SI + eps * (1.0 - S - I)
    out[1] = beta * SI - gamma * I
    out[2] = 2.0 * eps * (n * S - SS - SI) - 2.0 * beta * k * SI * v
    out[3] = -(gamma + beta) * SI + eps * (n * I - SI - II) + beta * k * SI * (v - u)
    out[4] = 2.0 * beta * SI - 2.0 * gamma * II + 2.0 * beta * k * SI * u
    return out


@kernel
def layer_rhs_kernel(t, y, p):
    beta, gamma, n = p[0], p[1], p[3]
    k = (n - 1.0) / n
    S, I, SS, SI, II = y[0], y[1], y[2], y[3], y[4]
    u = _ratio(SI, S, n)
    v = _ratio(SS, S, n)
    out = np.empty(5)
    out[0] = -beta * SI
    out[1] = beta * SI - gamma * I
    out[2] = -2.0 * beta * k * SI * v
    out[3] = -(gamma + beta) * SI + beta * k * SI * (v - u)
    out[4] = 2.0 * beta * SI - 2.0 * gamma * II + 2.0 * beta * k * SI * u
    return out


@kernel
def full_rhs_kernel(t, y, p):
    beta, gamma, eps, n = p[0], p[1], p[2], p[3]
    k = (n - 1.0) / n
    S, I, SS, SI, SR, II, IR, RR = y[0], y[1], y[2], y[3], y[4], y[5], y[6], y[7]
    u = _ratio(SI, S, n)
    v = _ratio(SS, S, n)
    w = _ratio(SR, S, n)
    out = np.empty(8)
    out[0] = -beta * SI + eps * (1.0 - S - I)
    out[1] = beta * SI - gamma * I
    out[2] = 2.0 * eps * SR - 2.0 * beta * k * SI * v
    out[3] = -(gamma + beta) * SI + eps * IR + beta * k * SI * (v - u)
    out[4] = gamma * SI - eps * SR + eps * RR - beta * k * SI * w
    out[5] = 2.0 * beta * SI - 2.0 * gamma * II + 2.0 * beta * k * SI * u
    out[6] = gamma * II - (gamma + eps) * IR + beta * k * SI * w
    out[7] = 2.0 * gamma * IR - 2.0 * eps * RR
    return out


@kernel
def slow_rhs_kernel(t, y, p):
    # slow time tau = epsilon * t
    n = p[3]
    out = np.empty(2)
    out[0] = 1.0 - y[0]
    out[1] = 2.0 * (n * y[0] - y[1])
    return out


# ---------------------------------------------------------------------------
# states


def complete_state(reduced, n):
    """Full 8-component state with SR, IR, RR from the edge identities."""
    S, I, SS, SI, II = np.asarray(reduced, dtype=float)
    SR = n * S - SS - SI
    IR = n * I - SI - II
    RR = n * (1.0 - S - I) - SR - IR
    return np.array([S, I, SS, SI, SR, II, IR, RR])


def project_state(full):
    full = np.asarray(full, dtype=float)
    return full[[0, 1, 2, 3, 5]]


def constraint_residuals(full, n):
    """Residuals of the three edge-sum identities for a full state."""
    S, I, SS, SI, SR, II, IR, RR = np.asarray(full, dtype=float)
    return np.array([
        SS + SI + SR - n * S,
        SI + II + IR - n * I,
        SR + IR + RR - n * (1.0 - S - I),
    ])


def delta_violation(state, n):
    """Largest violation of the well-posedness set (0 if inside)."""
    S, I, SS, SI, II = np.asarray(state, dtype=float)
    terms = [
        -min(S, I, SS, SI, II),
        S + I - 1.0,
        SS + SI - n * S,
        SI + II - n * I,
    ]
    return max(0.0, *terms)


def in_delta(state, n, tol=1e-9):
    return delta_violation(state, n) <= tol


def random_delta_point(n, rng):
    """Uniform-ish random point of the well-posedness set."""
    S, I = rng.dirichlet([1.0, 1.0, 1.0])[:2]
    a, b = rng.dirichlet([1.0, 1.0, 1.0])[:2]
    SS, SI = a * n * S, b * n * S
    # SI must also fit under n*I
    SI = min(SI, rng.uniform(0.0, 1.0) * n * I)
    II = rng.uniform(0.0, 1.0) * (n * I - SI)
    return np.array([S, I, SS, SI, II])


def random_physical_point(n, rng, sweeps=200):
    """Random reduced state whose completed full state is non-negative.

    The well-posedness set leaves RR unconstrained; here the symmetric
    matrix of ordered pair densities between S, I and R is built with row
    sums ``n * (S, I, R)`` by symmetric Sinkhorn scaling of a random positive
    matrix, then mixed with the fully segregated (diagonal) matrix so that
    boundary states are also reached.
    """
    x = rng.dirichlet([1.0, 1.0, 1.0])
    A = rng.uniform(0.0, 1.0, (3, 3))
    A = A + A.T
    target = n * x
    d = np.sqrt(target)
    for _ in range(sweeps):
        d = np.sqrt(d * target / (A @ d))
    M = d[:, None] * A * d[None, :]
    theta = rng.uniform(0.0, 1.0) ** 3
    M = (1.0 - theta) * M + theta * np.diag(target)
    return np.array([x[0], x[1], M[0, 0], M[0, 1], M[1, 1]])


def _check_finite(state):
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise ModelDomainError("state contains non-finite values")
    return state


def full_rhs(state, p: Params):
    """Time derivative of the 8-component state (validation use only)."""
    state = _check_finite(state)
    if state.shape != (8,):
        raise ModelDomainError("full state must have 8 components")
    return full_rhs_kernel(0.0, state, p.as_array())


def reduced_rhs(state, p: Params, tol=1e-9):
    state = _check_finite(state)
    if state.shape != (5,):
        raise ModelDomainError("reduced state must have 5 components")
    if delta_violation(state, p.n) > tol:
        raise ModelDomainError(f"state {state} lies outside the admissible set")
    return reduced_rhs_kernel(0.0, state, p.as_array())


def layer_rhs(state, p: Params, tol=1e-9):
    """Fast subsystem: ``reduced_rhs`` with the waning terms removed."""
    state = _check_finite(state)
    if state.shape != (5,):
        raise ModelDomainError("reduced state must have 5 components")
    if delta_violation(state, p.n) > tol:
        raise ModelDomainError(f"state {state} lies outside the admissible set")
    return layer_rhs_kernel(0.0, state, p.as_array())


# ---------------------------------------------------------------------------
# closed-form quantities


def _require_degree(p):
    if p.n <= 2:
        raise ModelDomainError(f"reproduction numbers need n > 2, got n={p.n}")


def r0(p: Params):
    _require_degree(p)
    return p.beta * (p.n - 2) / p.gamma


def r1_closed(p: Params):
    """SI-edge reproduction number including the waning correction."""
    _require_degree(p)
    b, g, e, n = p.beta, p.gamma, p.epsilon, p.n
    return b * (n - 1) * (g + e) / (g * (g + b + e))


def r1_fast(p: Params):
    """R1 of the fast limit (epsilon = 0); sets the loss-of-hyperbolicity slope."""
    return r1_closed(p.replace(epsilon=0.0))


def r2(p: Params):
    _require_degree(p)
    return p.beta * p.n / (2 * p.beta + p.gamma)


def ngm_matrices(p: Params):
    """Transmission and transition matrices on (SI, II/2, IR) at the DFE."""
    b, g, e, n = p.beta, p.gamma, p.epsilon, p.n
    M = np.array([[b * (n - 1), 0.0, 0.0],
                  [0.0, 0.0, 0.0],
                  [0.0, 0.0, 0.0]])
    V = np.array([[g + b, 0.0, -e],
                  [-b, 2 * g, 0.0],
                  [0.0, -2 * g, g + e]])
    return M, V


def r1_ngm(p: Params):
    """Spectral radius of the next-generation matrix M V^-1."""
    _require_degree(p)
    M, V = ngm_matrices(p)
    try:
        Vinv = np.linalg.inv(V)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("transition matrix is singular") from exc
    return float(np.max(np.abs(np.linalg.eigvals(M @ Vinv))))


def endemic_equilibrium_series(p: Params):
    """Endemic equilibrium to first order in epsilon (zeroth order for S, SS)."""
    if not p.epidemic:
        raise PreconditionError("endemic equilibrium requires R0 > 1")
    b, g, e, n = p.beta, p.gamma, p.epsilon, p.n
    D = (n * n - n - 1) * b - g
    growth = n * ((n - 2) * b - g)
    S = (n - 1) * (g + b) / D
    I = e * growth / (g * D)
    SS = n * (g + b) ** 2 / (b * D)
    SI = e * growth / (b * D)
    II = e * growth / (g * D)
    return np.array([S, I, SS, SI, II])


def lambda5(S, SS, p: Params):
    """Transverse eigenvalue of the layer flow on the critical manifold."""
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ModelDomainError("lambda5 is undefined at S = 0")
    out = p.beta * (p.n - 1) * np.asarray(SS) / (p.n * S) - (p.gamma + p.beta)
    return out if out.ndim else float(out)


def eigen_on_C0(point, p: Params):
    S, SS = point
    return EigenData(0.0, 0.0, -p.gamma, -2.0 * p.gamma, lambda5(S, SS, p))


@dataclass(frozen=True)
class Curves:
    """Reference curves in the (S, SS) plane of the critical manifold."""

    n: float
    slope: float  # L, loss-of-hyperbolicity line SS = L S

    def L_line(self, S):
        return self.slope * np.asarray(S, dtype=float)

    def parabola(self, S):
        S = np.asarray(S, dtype=float)
        return self.n * S ** 2

    def alpha(self, S):
        """Above this curve lambda5 decreases along the slow flow."""
        S = np.asarray(S, dtype=float)
        return 2.0 * self.n * S ** 2 / (S + 1.0)


def geometry(p: Params):
    _require_degree(p)
    if p.beta <= 0:
        raise ModelDomainError("the loss-of-hyperbolicity line needs beta > 0")
    L = p.n * (p.beta + p.gamma) / (p.beta * (p.n - 1))
    return Curves(n=float(p.n), slope=L)
