"""Random members of Lambda and Lambda_a built by construction.

Each sample is a smooth function of time: its parameters (levels and Fourier
amplitudes) are drawn first and then evaluated at bin midpoints, so the same
draw can be realized on grids of different resolution.  The flow is

    Q = Q^mu * exp(noise) + correction along a spanning tree,

where the correction makes ``(mu[k+1] - mu[k]) M/T0 + div Q[k] = 0`` hold
exactly on every bin and only ever adds positive flow.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .grid import PeriodicDensity, PeriodicFlow, flow_to_current, forward_difference
from .model import Graph, ProtocolError, RateProtocol


@dataclass(frozen=True)
class SmoothDraw:
    """Parameters of one random (mu, Q) sample, independent of the grid."""

    level: np.ndarray        # (n_states,) positive base weights
    mu_modes: np.ndarray     # (n_states, modes, 2) Fourier coefficients
    noise_level: np.ndarray  # (n_edges,) log-scale offsets of Q
    q_modes: np.ndarray      # (n_edges, modes, 2)
    cycle: np.ndarray        # (n_pairs,) extra constant circulation weights


def draw(graph: Graph, rng: np.random.Generator, modes: int = 2, modulation: float = 0.2,
         noise: float = 0.3, circulation: float = 0.0) -> SmoothDraw:
    """Draw grid-independent sample parameters.

    ``modulation`` bounds the relative time variation of ``mu``; ``noise`` is
    the log-scale spread of ``Q`` around ``Q^mu``.
    """
    n, e = graph.n_states, graph.n_edges
    level = rng.uniform(0.5, 1.5, size=n)
    # amplitudes decay with mode number and sum to at most `modulation`
    raw = rng.uniform(-1.0, 1.0, size=(n, modes, 2))
    weights = 1.0 / np.arange(1, modes + 1) ** 2
    mu_modes = raw * weights[None, :, None] * (modulation / (2.0 * weights.sum()))
    noise_level = rng.normal(scale=noise, size=e)
    q_modes = rng.normal(scale=noise / 2.0, size=(e, modes, 2))
    cycle = rng.uniform(-circulation, circulation, size=len(graph.pairs))
    return SmoothDraw(level, mu_modes, noise_level, q_modes, cycle)


def _fourier(modes: np.ndarray, t: np.ndarray) -> np.ndarray:
    k = np.arange(1, modes.shape[1] + 1)
    ang = 2.0 * np.pi * k[None, :, None] * t[None, None, :]
    return np.sum(modes[:, :, 0:1] * np.cos(ang) + modes[:, :, 1:2] * np.sin(ang), axis=1)


def _spanning_tree(g: Graph):
    """BFS tree over unordered pairs; returns (order, parent) with root 0."""
    adj = [[] for _ in range(g.n_states)]
    for a, b in g.pairs:
        adj[a].append(b)
        adj[b].append(a)
    parent = [-1] * g.n_states
    seen = [False] * g.n_states
    seen[0] = True
    order = [0]
    dq = deque([0])
    while dq:
        u = dq.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                order.append(v)
                dq.append(v)
    if not all(seen):
        raise ProtocolError("graph is not connected")
    return order, parent


def _repair(g: Graph, q: np.ndarray, target_div: np.ndarray) -> np.ndarray:
    """Add nonnegative flow on tree edges so that ``div q == target_div``."""
    order, parent = _spanning_tree(g)
    need = target_div - _div(g, q)          # (n, M), sums to ~0 per bin
    sub = need.copy()
    q = q.copy()
    for v in reversed(order[1:]):
        u = parent[v]
        c = sub[v]                           # required net flow v -> u
        e_vu, e_uv = g.edge_index(v, u), g.edge_index(u, v)
        if e_vu is None or e_uv is None:
            raise ProtocolError("sample construction needs E == E_s")
        q[e_vu] += np.maximum(c, 0.0)
        q[e_uv] += np.maximum(-c, 0.0)
        sub[u] += c
    return q


def _div(g: Graph, q: np.ndarray) -> np.ndarray:
    out = np.zeros((g.n_states, q.shape[1]))
    for e, (y, z) in enumerate(g.edges):
        out[y] += q[e]
        out[z] -= q[e]
    return out


def realize(d: SmoothDraw, p: RateProtocol) -> tuple[PeriodicDensity, PeriodicFlow]:
    """Evaluate a draw on the protocol's grid; the result lies in Lambda."""
    g = p.graph
    t = p.midpoints() / p.period
    w = d.level[:, None] * (1.0 + _fourier(d.mu_modes, t))
    mu = w / w.sum(axis=0, keepdims=True)
    ys = np.array([y for y, _ in g.edges], dtype=int)
    q = mu[ys] * p.rates * np.exp(d.noise_level[:, None] + _fourier(d.q_modes, t))
    # extra one-directional flow; the repair below restores continuity
    for i, (a, b) in enumerate(g.pairs):
        e = g.edge_index(a, b) if d.cycle[i] > 0 else g.edge_index(b, a)
        if e is not None:
            q[e] += abs(d.cycle[i])
    q = _repair(g, q, -forward_difference(mu, p.period))
    return PeriodicDensity(g, p.period, mu), PeriodicFlow(g, p.period, q)


def random_lambda(p: RateProtocol, rng: np.random.Generator, **kw):
    """One random interior ``(mu, Q)`` in Lambda on ``p``'s grid."""
    return realize(draw(p.graph, rng, **kw), p)


def random_lambda_a(p: RateProtocol, rng: np.random.Generator, **kw):
    """One random ``(mu, J)`` in Lambda_a, ``J`` the current of a Lambda sample."""
    mu, q = random_lambda(p, rng, **kw)
    return mu, flow_to_current(q)
