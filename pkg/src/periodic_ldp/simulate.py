"""Thinning simulation of the periodic chain and empirical observables.

Random numbers come from numpy's Philox 4x64 counter-based generator.  A run
is fixed by ``(seed, replica)``: replica ``i`` uses ``Philox(seed).jumped(i)``,
so replicas are independent streams that can be generated in any order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (PeriodicCurrent, PeriodicDensity, PeriodicFlow, divergence,
                   flow_to_current)
from .model import ProtocolError, RateProtocol

_CHUNK = 4096
_FIRST_CHUNK = 64


def make_rng(seed: int, replica: int = 0) -> np.random.Generator:
    bitgen = np.random.Philox(seed)
    if replica:
        bitgen = bitgen.jumped(replica)
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class Path:
    """Sampled trajectory on ``[0, n*T0)``.

    ``times``, ``source`` and ``target`` list the accepted jumps in order;
    ``proposed`` and ``accepted`` count thinning candidates per edge.
    """

    initial_state: int
    times: np.ndarray
    source: np.ndarray
    target: np.ndarray
    n_periods: int
    period: float
    seed: int
    replica: int = 0
    proposed: np.ndarray | None = None
    accepted: np.ndarray | None = None

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    @property
    def final_state(self) -> int:
        return int(self.target[-1]) if len(self.target) else self.initial_state

    def states_before(self, t: np.ndarray) -> np.ndarray:
        """Left limits ``X_{t-}`` (``X_0`` at ``t = 0``)."""
        i = np.searchsorted(self.times, t, side="left")
        seq = np.concatenate([[self.initial_state], self.target]).astype(int)
        return seq[i]

    def to_csv(self) -> str:
        lines = [f"# initial_state={self.initial_state}", f"# n_periods={self.n_periods}",
                 f"# period={self.period!r}", f"# seed={self.seed}", f"# replica={self.replica}",
                 "time,from,to"]
        for t, y, z in zip(self.times, self.source, self.target):
            lines.append(f"{t:.16e},{int(y)},{int(z)}")
        return "\n".join(lines) + "\n"


def sample_path(p: RateProtocol, x0: int, n: int, seed: int, replica: int = 0) -> Path:
    """Sample ``n`` periods by thinning with per-edge envelopes.

    From state ``y`` a candidate arrives after an exponential time of rate
    ``lam(y) = sum_z lam(y, z)``; its edge is picked with probability
    ``lam(y, z)/lam(y)`` and kept with probability ``r(y, z; s)/lam(y, z)``.
    """
    if n < 1:
        raise ValueError("need at least one period")
    g = p.graph
    if not 0 <= x0 < g.n_states:
        raise ValueError(f"unknown initial state {x0}")
    rng = make_rng(seed, replica)
    lam = p.envelope()
    out_edges = [[] for _ in range(g.n_states)]
    for e, (y, _) in enumerate(g.edges):
        out_edges[y].append(e)
    total = [float(sum(lam[e] for e in es)) for es in out_edges]
    cum = [np.cumsum([lam[e] for e in es]) / total[y] if es else np.array([])
           for y, es in enumerate(out_edges)]
    accept = (p.rates / lam[:, None]).tolist()
    targets = [z for _, z in g.edges]
    m, dt, horizon = p.bins, p.dt, n * p.period

    proposed = np.zeros(g.n_edges, dtype=np.int64)
    times, src, dst = [], [], []
    t, y = 0.0, int(x0)
    buf_e = buf_u = buf_v = ()
    size = pos = 0
    while True:
        if total[y] == 0.0:
            break
        if pos == size:
            # chunks grow 64, 128, ... up to _CHUNK so short runs stay cheap
            size = min(2 * size, _CHUNK) if size else _FIRST_CHUNK
            buf_e = rng.standard_exponential(size).tolist()
            buf_u = rng.random(size).tolist()
            buf_v = rng.random(size).tolist()
            pos = 0
        t += buf_e[pos] / total[y]
        if t >= horizon:
            break
        es = out_edges[y]
        if len(es) > 1:
            # cum[y][-1] may round just below 1
            e = es[min(int(np.searchsorted(cum[y], buf_u[pos], side="right")), len(es) - 1)]
        else:
            e = es[0]
        proposed[e] += 1
        k = int((t % p.period) / dt)
        if k >= m:
            k = m - 1
        if buf_v[pos] < accept[e][k]:
            z = targets[e]
            times.append(t)
            src.append(y)
            dst.append(z)
            y = z
        pos += 1
    times_a = np.array(times, dtype=float)
    src_a = np.array(src, dtype=int)
    dst_a = np.array(dst, dtype=int)
    accepted = np.zeros(g.n_edges, dtype=np.int64)
    if len(times_a):
        eidx = np.array([g.edge_index(a, b) for a, b in zip(src, dst)])
        accepted = np.bincount(eidx, minlength=g.n_edges).astype(np.int64)
    return Path(int(x0), times_a, src_a, dst_a, int(n), p.period, int(seed), int(replica),
                proposed, accepted)


@dataclass(frozen=True)
class EmpiricalTriple:
    """Binned empirical density, flow and current of one path.

    ``boundary_occupation[:, k]`` is the fraction of periods in which the
    path sits in each state just before time ``k*T0/M`` (left limit).
    ``occupation`` is the raw time spent per (state, bin) summed over periods.
    """

    mu: PeriodicDensity
    q: PeriodicFlow
    j: PeriodicCurrent
    bar_mu: np.ndarray
    bar_q: np.ndarray
    bar_j: np.ndarray
    boundary_occupation: np.ndarray
    occupation: np.ndarray
    counts: np.ndarray
    n_periods: int
    initial_state: int
    final_state: int


def jump_bins(path: Path, m: int) -> np.ndarray:
    """Bin index of each jump time modulo the period (edge times go right)."""
    dt = path.period / m
    edges = np.arange(path.n_periods * m + 1) * dt
    return (np.searchsorted(edges, path.times, side="right") - 1) % m


def accumulate(path: Path, p_or_graph, m: int | None = None) -> EmpiricalTriple:
    """Exact binned occupation, jump counts and boundary occupations.

    Parameters
    ----------
    path : Path
    p_or_graph : RateProtocol or Graph
        Only the graph (and, for a protocol, its bin count) is used.
    m : int, optional
        Number of bins; defaults to the protocol's.
    """
    g = getattr(p_or_graph, "graph", p_or_graph)
    if m is None:
        m = p_or_graph.bins
    n, T = path.n_periods, path.period
    dt = T / m
    ns = g.n_states
    # cumulative occupation evaluated at every global bin edge
    grid = np.arange(n * m + 1) * dt
    ev = np.concatenate([[0.0], path.times])
    seq = np.concatenate([[path.initial_state], path.target]).astype(int)
    seg = np.diff(np.concatenate([ev, [n * T]]))
    i = np.searchsorted(ev, grid, side="right") - 1
    occ = np.zeros((ns, m))
    for x in range(ns):
        in_x = seq == x
        cum = np.concatenate([[0.0], np.cumsum(np.where(in_x, seg, 0.0))])
        at = cum[i] + np.where(in_x[i], grid - ev[i], 0.0)
        at[-1] = cum[-1]
        occ[x] = np.diff(at).reshape(n, m).sum(axis=0)
    mu_vals = occ / (n * dt)
    mu_vals /= mu_vals.sum(axis=0, keepdims=True)

    counts = np.zeros((g.n_edges, m))
    if path.n_jumps:
        kb = jump_bins(path, m)
        eidx = np.array([g.edge_index(int(a), int(b)) for a, b in zip(path.source, path.target)])
        np.add.at(counts, (eidx, kb), 1.0)
    q = PeriodicFlow(g, T, counts / (n * dt))
    mu = PeriodicDensity(g, T, mu_vals)

    left = path.states_before(grid[:-1])
    nu = np.zeros((ns, m))
    np.add.at(nu, (left, np.tile(np.arange(m), n)), 1.0)
    nu /= n
    j = flow_to_current(q)
    return EmpiricalTriple(mu, q, j, mu_vals.mean(axis=1), q.time_average(), j.time_average(),
                           nu, occ, counts, n, path.initial_state, path.final_state)


def conservation_residuals(tr: EmpiricalTriple) -> np.ndarray:
    """Defect of the binned conservation identity, shape (n_states, M).

    For every state and bin, ``nu[k+1] - nu[k] + dt * div q[k] = 0`` where on
    the last bin ``nu[M]`` is ``nu[0]`` plus the boundary term
    ``(delta_{X_end} - delta_{X_0})/n``.  Zero up to round-off.
    """
    nu = tr.boundary_occupation
    ns, m = nu.shape
    dt = tr.q.dt
    nxt = np.roll(nu, -1, axis=1)
    bt = np.zeros(ns)
    bt[tr.final_state] += 1.0 / tr.n_periods
    bt[tr.initial_state] -= 1.0 / tr.n_periods
    nxt[:, -1] += bt
    return nxt - nu + dt * divergence(tr.q)


@dataclass(frozen=True)
class EntropyFlows:
    """Per-period entropy flows of one path, boundary terms excluded.

    ``boundary_ex`` is ``log w(X_end) - log w(X_0)`` (``w`` at time ``0-``)
    divided by ``n``; the raw jump sum for the excess flow is ``ex + boundary_ex``.
    """

    naive: float
    tot: float
    ex: float
    boundary_ex: float


def path_entropy_flows(path: Path, p: RateProtocol, w) -> EntropyFlows:
    """Naive, total and excess entropy flows of a path, divided by ``n``.

    ``naive`` and ``tot`` are the jump sums of ``log r(y,z;s)/r^B(z,y;T0-s)``
    minus the exit-rate integral (which cancels for the reversed protocol).
    ``ex`` is the jump sum of ``log w_s(X_s)/w_s(X_{s-})`` with the boundary
    term ``boundary_ex`` removed.
    """
    g = p.graph
    if not g.is_symmetric():
        raise ProtocolError("entropy flows need E == E_s")
    wv = np.asarray(getattr(w, "values", w), dtype=float)
    if np.any(wv <= 0):
        raise ValueError("w must be strictly positive")
    m = p.bins
    n = path.n_periods
    rev = g.reverse_index()
    r = p.rates
    tr = accumulate(path, p)
    logr = np.log(r)
    # bin-resolved log ratios, summed against the jump counts
    naive_jump = np.sum(tr.counts * (logr - logr[rev][:, ::-1]))
    tot_jump = np.sum(tr.counts * (logr - logr[rev]))
    ex_rates = p.exit_rates()
    integral = np.sum(tr.occupation * (ex_rates - ex_rates[:, ::-1]))
    logw = np.log(wv)
    ex_jump = 0.0
    if path.n_jumps:
        kb = jump_bins(path, m)
        ex_jump = float(np.sum(logw[path.target, kb] - logw[path.source, kb]))
    bt = float(logw[path.final_state, m - 1] - logw[path.initial_state, m - 1])
    return EntropyFlows(float(naive_jump - integral) / n, float(tot_jump) / n,
                        (ex_jump - bt) / n, bt / n)
