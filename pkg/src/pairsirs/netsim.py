"""Exact stochastic SIRS dynamics on random regular graphs.

Edge counts follow the ordered-pair convention of the pair equations:
``SS``, ``II`` and ``RR`` count each within-state edge from both ends (so
they are always even), mixed counts such as ``SI`` count each edge once.
With that convention ``SS + SI + SR = n [S]`` etc. hold exactly.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import model
from ._accel import kernel
from .errors import GraphGenerationError, ModelDomainError, PreconditionError
from .integrate import IntegrationConfig, Trajectory, integrate_system
from .io import write_json
from .model import Params

S_, I_, R_ = 0, 1, 2
EDGE_NAMES = ("SS", "SI", "II", "SR", "IR", "RR")
NODE_NAMES = ("S", "I", "R")


@dataclass
class RegularGraph:
    N: int
    n: int
    neighbors: np.ndarray  # (N, n) int64, row v lists the neighbours of v

    def edges(self):
        u = np.repeat(np.arange(self.N), self.n)
        v = self.neighbors.ravel()
        keep = u < v
        return np.column_stack([u[keep], v[keep]])

    def reverse_slots(self):
        """``rev[v * n + k]`` is the slot of neighbour ``w = neighbors[v, k]`` that points back to v."""
        N, n = self.N, self.n
        w = self.neighbors.ravel()
        v = np.repeat(np.arange(N), n)
        back = np.argmax(self.neighbors[w] == v[:, None], axis=1)
        return w * n + back

    def is_connected(self):
        u = np.repeat(np.arange(self.N), self.n)
        adj = coo_matrix((np.ones(u.size), (u, self.neighbors.ravel())), shape=(self.N, self.N))
        return connected_components(adj, directed=False)[0] == 1


def _pair_stubs(N, n, rng):
    """One attempt at a simple n-regular graph; ``None`` if the pairing gets stuck.

    Stubs are shuffled and paired; pairs that would form a loop or a repeated
    edge go back into the pool for the next round.
    """
    adj = [set() for _ in range(N)]
    stubs = np.repeat(np.arange(N), n)
    while stubs.size:
        rng.shuffle(stubs)
        left = []
        for a, b in zip(stubs[0::2], stubs[1::2]):
            a, b = int(a), int(b)
            if a == b or b in adj[a]:
                left.extend((a, b))
            else:
                adj[a].add(b)
                adj[b].add(a)
        if len(left) == stubs.size:
            # no progress this round: check that some valid pair remains at all
            pool = np.unique(left)
            if not any(b not in adj[a] for i, a in enumerate(pool) for b in pool[i + 1:]):
                return None
        stubs = np.array(left, dtype=np.int64)
    return np.array([sorted(s) for s in adj], dtype=np.int64)


def generate_regular_graph(N, n, seed=None, max_retries=10_000):
    """Uniformly-paired simple, connected n-regular graph on N nodes."""
    N, n = int(N), int(n)
    if n < 1 or N <= n:
        raise PreconditionError(f"need N > n >= 1 (got N={N}, n={n})")
    if (N * n) % 2:
        raise PreconditionError(f"N*n = {N * n} is odd: no {n}-regular graph on {N} nodes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_retries):
        nb = _pair_stubs(N, n, rng)
        if nb is None:
            continue
        g = RegularGraph(N, n, nb)
        if g.is_connected():
            return g
    raise GraphGenerationError(f"no simple connected {n}-regular graph on {N} nodes "
                               f"after {max_retries} attempts")


# ---------------------------------------------------------------------------
# Gillespie kernel


@kernel
def _set_add(items, pos, size, x):
    pos[x] = size
    items[size] = x
    return size + 1


@kernel
def _set_remove(items, pos, size, x):
    i = pos[x]
    last = items[size - 1]
    items[i] = last
    pos[last] = i
    pos[x] = -1
    return size - 1


@kernel
def _relabel(v, old, new, state, neighbors, C):
    n = neighbors.shape[1]
    for k in range(n):
        c = state[neighbors[v, k]]
        C[old, c] -= 1
        C[c, old] -= 1
        C[new, c] += 1
        C[c, new] += 1
    state[v] = new


@kernel
def gillespie_kernel(neighbors, rev, state, beta, gamma, eps, sample_times, rng,
                     out_nodes, out_edges, max_events):
    """Event-driven SIRS run; fills ``out_nodes`` (S, I, R) and ``out_edges`` (3x3 ordered-pair counts).

    Returns the number of infection, recovery and waning events.
    """
    N, n = neighbors.shape
    C = np.zeros((3, 3), dtype=np.int64)
    for v in range(N):
        for k in range(n):
            C[state[v], state[neighbors[v, k]]] += 1
    si_items = np.empty(N * n, dtype=np.int64)
    si_pos = np.full(N * n, -1, dtype=np.int64)
    n_si = 0
    i_items = np.empty(N, dtype=np.int64)
    i_pos = np.full(N, -1, dtype=np.int64)
    n_i = 0
    r_items = np.empty(N, dtype=np.int64)
    r_pos = np.full(N, -1, dtype=np.int64)
    n_r = 0
    for v in range(N):
        if state[v] == I_:
            n_i = _set_add(i_items, i_pos, n_i, v)
        elif state[v] == R_:
            n_r = _set_add(r_items, r_pos, n_r, v)
        else:
            for k in range(n):
                if state[neighbors[v, k]] == I_:
                    n_si = _set_add(si_items, si_pos, n_si, v * n + k)

    counts = np.zeros(3, dtype=np.int64)
    t = 0.0
    j = 0
    n_samples = sample_times.shape[0]
    events = 0
    while j < n_samples:
        total = beta * n_si + gamma * n_i + eps * n_r
        if total > 0.0 and events < max_events:
            t_next = t - math.log(1.0 - rng.random()) / total
        else:
            t_next = math.inf
        while j < n_samples and sample_times[j] < t_next:
            out_nodes[j, 0] = N - n_i - n_r
            out_nodes[j, 1] = n_i
            out_nodes[j, 2] = n_r
            for a in range(3):
                for b in range(3):
                    out_edges[j, a, b] = C[a, b]
            j += 1
        if j >= n_samples or t_next == math.inf:
            break
        t = t_next
        events += 1
        u = rng.random() * total
        if u < beta * n_si:
            slot = si_items[min(int(rng.random() * n_si), n_si - 1)]
            v = slot // n
            # v: S -> I
            for k in range(n):
                w = neighbors[v, k]
                sw = state[w]
                if sw == I_:
                    n_si = _set_remove(si_items, si_pos, n_si, v * n + k)
                elif sw == S_:
                    n_si = _set_add(si_items, si_pos, n_si, rev[v * n + k])
            _relabel(v, S_, I_, state, neighbors, C)
            n_i = _set_add(i_items, i_pos, n_i, v)
            counts[0] += 1
        elif u < beta * n_si + gamma * n_i:
            v = i_items[min(int(rng.random() * n_i), n_i - 1)]
            # v: I -> R
            for k in range(n):
                if state[neighbors[v, k]] == S_:
                    n_si = _set_remove(si_items, si_pos, n_si, rev[v * n + k])
            _relabel(v, I_, R_, state, neighbors, C)
            n_i = _set_remove(i_items, i_pos, n_i, v)
            n_r = _set_add(r_items, r_pos, n_r, v)
            counts[1] += 1
        else:
            v = r_items[min(int(rng.random() * n_r), n_r - 1)]
            # v: R -> S
            for k in range(n):
                if state[neighbors[v, k]] == I_:
                    n_si = _set_add(si_items, si_pos, n_si, v * n + k)
            _relabel(v, R_, S_, state, neighbors, C)
            n_r = _set_remove(r_items, r_pos, n_r, v)
            counts[2] += 1
    return counts


@dataclass
class SimRecord:
    times: np.ndarray
    nodes: np.ndarray  # (k, 3) counts of S, I, R
    edges: np.ndarray  # (k, 6) raw counts SS, SI, II, SR, IR, RR
    N: int
    n: int
    seed: object
    events: dict = field(default_factory=dict)

    def normalized(self):
        """Reduced-state densities (S, I, SS, SI, II), node and edge counts divided by N."""
        nd = self.nodes / self.N
        ed = self.edges / self.N
        return np.column_stack([nd[:, 0], nd[:, 1], ed[:, 0], ed[:, 1], ed[:, 2]])

    def edge_identity_residuals(self):
        """Exact integer residuals of the three edge-sum identities per sample."""
        S, I, R = self.nodes.T
        SS, SI, II, SR, IR, RR = self.edges.T
        return np.column_stack([SS + SI + SR - self.n * S, SI + II + IR - self.n * I,
                                SR + IR + RR - self.n * R])

    def to_csv(self, path, metadata=None):
        import json
        with open(path, "w", newline="") as fh:
            if metadata is not None:
                fh.write("# " + json.dumps(metadata, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(["t", *NODE_NAMES, *EDGE_NAMES])
            for t, nd, ed in zip(self.times, self.nodes, self.edges):
                w.writerow([repr(float(t)), *map(int, nd), *map(int, ed)])


def _edge_columns(E):
    # E[..., a, b]: ordered pairs with first end in a, second in b
    return np.stack([E[:, S_, S_], E[:, S_, I_], E[:, I_, I_], E[:, S_, R_], E[:, I_, R_],
                     E[:, R_, R_]], axis=1)


def gillespie_run(graph: RegularGraph, p: Params, initial_infected, t_max, sample_dt,
                  seed=None, max_events=10**9):
    """Simulate from the given infected node set; all other nodes start susceptible."""
    if min(p.beta, p.gamma, p.epsilon) < 0:
        raise PreconditionError("rates must be non-negative")
    if p.n != graph.n:
        raise PreconditionError(f"Params degree {p.n} differs from graph degree {graph.n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = np.zeros(graph.N, dtype=np.int64)
    infected = np.asarray(initial_infected, dtype=np.int64)
    if infected.size and (infected.min() < 0 or infected.max() >= graph.N):
        raise PreconditionError("initial infected node index out of range")
    state[infected] = I_
    times = np.arange(0.0, t_max + 0.5 * sample_dt, sample_dt)
    nodes = np.zeros((times.size, 3), dtype=np.int64)
    E = np.zeros((times.size, 3, 3), dtype=np.int64)
    counts = gillespie_kernel(graph.neighbors, graph.reverse_slots(), state, float(p.beta),
                              float(p.gamma), float(p.epsilon), times, rng, nodes, E, max_events)
    return SimRecord(times, nodes, _edge_columns(E), graph.N, graph.n, seed,
                     {"infection": int(counts[0]), "recovery": int(counts[1]),
                      "waning": int(counts[2])})


def run_ensemble(N, p: Params, replicas, seed=0, initial_fraction=0.01, t_max=20.0,
                 sample_dt=0.05, same_graph=False):
    """Independent replicas, each with its own graph, infected set and RNG stream.

    Streams are spawned from ``numpy.random.SeedSequence(seed)`` so the
    ensemble is reproducible bit for bit.
    """
    n = int(p.n)
    if n != p.n:
        raise PreconditionError("network simulation needs an integer degree")
    children = np.random.SeedSequence(seed).spawn(replicas)
    records = []
    shared = None
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        if same_graph:
            shared = shared or generate_regular_graph(N, n, np.random.default_rng(seed))
            g = shared
        else:
            g = generate_regular_graph(N, n, rng)
        n_inf = max(1, int(round(initial_fraction * N))) if initial_fraction > 0 else 0
        infected = rng.choice(N, size=n_inf, replace=False) if n_inf else np.empty(0, np.int64)
        rec = gillespie_run(g, p, infected, t_max, sample_dt, rng)
        rec.seed = {"root": seed, "replica": k}
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# comparison with the pair ODE


def ensemble_mean(records):
    times = records[0].times
    for r in records[1:]:
        if r.times.shape != times.shape or np.any(r.times != times):
            raise PreconditionError("records have different sample times")
    return times, np.mean([r.normalized() for r in records], axis=0)


def _peak_time(t, y):
    i = int(np.argmax(y))
    if 0 < i < len(y) - 1:
        from .singular_orbit import _refine_peak
        return float(_refine_peak(t, y, i))
    return float(t[i])


@dataclass
class ComparisonReport:
    sup_norm: dict
    peak_time_sim: float
    peak_time_ode: float
    peak_rel_error: float
    tolerance: float
    replicas: int
    initial_state: list

    @property
    def within_tolerance(self):
        return self.peak_rel_error <= self.tolerance

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["within_tolerance"] = self.within_tolerance
        return d


def compare_to_ode(records, p: Params, ode_initial=None, tolerance=0.15, init_tol=1e-9):
    """Ensemble mean of normalized records against the reduced ODE from the matched start."""
    if isinstance(records, SimRecord):
        records = [records]
    times, mean = ensemble_mean(records)
    y0 = mean[0]
    if ode_initial is not None:
        ode_initial = np.asarray(ode_initial, dtype=float)
        if np.max(np.abs(ode_initial - y0)) > init_tol:
            raise ModelDomainError(
                f"ODE initial state {ode_initial} does not match the simulated start {y0}")
    cfg = IntegrationConfig(max_time=float(times[-1] - times[0]) or 1.0, dense=True)
    traj = integrate_system("full", p, y0, cfg)
    ode = traj.sol(times)
    sup = {name: float(np.max(np.abs(mean[:, k] - ode[:, k])))
           for k, name in enumerate(model.REDUCED_NAMES)}
    tp_sim = _peak_time(times, mean[:, 1])
    fine = np.linspace(times[0], times[-1], 20 * len(times))
    tp_ode = _peak_time(fine, traj.sol(fine)[:, 1])
    rel = abs(tp_sim - tp_ode) / tp_ode if tp_ode > 0 else (0.0 if tp_sim == tp_ode else math.inf)
    return ComparisonReport(sup, tp_sim, tp_ode, float(rel), tolerance, len(records), y0.tolist())


def ensemble_summary(records, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95)):
    times, _ = ensemble_mean(records)
    stack = np.array([r.normalized() for r in records])
    return {
        "times": times.tolist(),
        "components": list(model.REDUCED_NAMES),
        "mean": stack.mean(axis=0).tolist(),
        "quantiles": {repr(q): np.quantile(stack, q, axis=0).tolist() for q in quantiles},
        "replicas": len(records),
        "seeds": [r.seed for r in records],
        "events": [r.events for r in records],
    }


def write_ensemble_json(path, records, metadata=None, comparison=None):
    payload = {"metadata": metadata or {}, "summary": ensemble_summary(records)}
    if comparison is not None:
        payload["comparison"] = comparison.to_dict()
    write_json(path, payload)


def periodicity_probe(record: SimRecord, p: Params, smooth_window=5.0, tail_fraction=0.5):
    """Best-effort periodicity classification of one long stochastic run.

    The infected density is smoothed with a moving average of
    ``smooth_window`` time units and passed through the same peak criteria
    as :func:`pairsirs.singular_orbit.detect_attractor`.  Demographic noise
    can both fake and mask cycles, so the report always carries a caveat.
    """
    from .singular_orbit import detect_attractor
    Y = record.normalized()
    dt = record.times[1] - record.times[0]
    w = max(1, int(round(smooth_window / dt)))
    kernel_w = np.ones(w) / w
    smooth = np.column_stack([np.convolve(Y[:, k], kernel_w, mode="valid") for k in range(5)])
    t = record.times[w - 1:]
    traj = Trajectory(t, smooth, regime="full", names=model.REDUCED_NAMES)
    report = detect_attractor(traj, p, tail_fraction=tail_fraction)
    report.note = ("stochastic run, moving average over "
                   f"{smooth_window:g} time units; classification is best effort"
                   + (f"; {report.note}" if report.note else ""))
    return report
