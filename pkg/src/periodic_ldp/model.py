"""State graphs and time-periodic jump-rate protocols.

Rates are tabulated on ``M`` uniform bins of the period ``[0, T0)`` and are
constant inside each bin.  Bin ``k`` covers ``[k*T0/M, (k+1)*T0/M)``.  Time
reflection ``t -> T0 - t`` maps bin ``k`` onto bin ``M - 1 - k``.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

EXAMPLES = ("quantum_dot", "defect_center", "stochastic_resonance", "piecewise")


class ProtocolError(ValueError):
    """Raised when a protocol or its parameters cannot be constructed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Directed graph ``(V, E)`` without self-loops.

    ``edges`` hold pairs of state *indices*; ``states`` hold the labels used
    in files and reports.
    """

    states: tuple
    edges: tuple

    def __post_init__(self):
        states = tuple(self.states)
        edges = tuple((int(y), int(z)) for y, z in self.edges)
        n = len(states)
        if n < 1:
            raise ProtocolError("graph needs at least one state")
        if len(set(states)) != n:
            raise ProtocolError("duplicate state labels")
        if len(set(edges)) != len(edges):
            raise ProtocolError("duplicate edges")
        for y, z in edges:
            if y == z:
                raise ProtocolError(f"self-loop ({y},{z}) not allowed")
            if not (0 <= y < n and 0 <= z < n):
                raise ProtocolError(f"edge ({y},{z}) references unknown state")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_edge_index", {e: i for i, e in enumerate(edges)})
        pairs = sorted({(min(y, z), max(y, z)) for y, z in edges})
        object.__setattr__(self, "_pairs", tuple(pairs))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def sym_edges(self) -> tuple:
        """Ordered pairs of the symmetrization ``E_s``."""
        out = []
        for a, b in self._pairs:
            out.append((a, b))
            out.append((b, a))
        return tuple(out)

    @property
    def pairs(self) -> tuple:
        """Unordered pairs ``(a, b)``, ``a < b``; currents are stored on these."""
        return self._pairs

    def edge_index(self, y: int, z: int) -> int | None:
        return self._edge_index.get((y, z))

    def reverse_index(self) -> np.ndarray:
        """Index of ``(z, y)`` for every edge ``(y, z)``; requires ``E == E_s``."""
        if not self.is_symmetric():
            raise ProtocolError("graph is not symmetric (E != E_s)")
        return np.array([self._edge_index[(z, y)] for y, z in self.edges], dtype=int)

    def is_symmetric(self) -> bool:
        return all((z, y) in self._edge_index for y, z in self.edges)

    def is_strongly_connected(self) -> bool:
        n = self.n_states
        if n == 1:
            return True
        fwd = [[] for _ in range(n)]
        bwd = [[] for _ in range(n)]
        for y, z in self.edges:
            fwd[y].append(z)
            bwd[z].append(y)
        return _reaches_all(fwd, n) and _reaches_all(bwd, n)

    def label(self, i: int) -> str:
        return str(self.states[i])

    def edge_label(self, e: int) -> str:
        y, z = self.edges[e]
        return f"{self.label(y)}->{self.label(z)}"

    def pair_label(self, p: int) -> str:
        a, b = self._pairs[p]
        return f"{self.label(a)}~{self.label(b)}"


def _reaches_all(adj, n) -> bool:
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    while queue:
        y = queue.popleft()
        for z in adj[y]:
            if not seen[z]:
                seen[z] = True
                queue.append(z)
    return all(seen)


def two_state_graph() -> Graph:
    return Graph(states=(0, 1), edges=((0, 1), (1, 0)))


def complete_graph(n: int) -> Graph:
    return Graph(states=tuple(range(n)),
                 edges=tuple((y, z) for y in range(n) for z in range(n) if y != z))


@dataclass(frozen=True)
class RateProtocol:
    """Piecewise-constant ``T0``-periodic rates ``r(y, z; t)`` on a graph.

    Attributes
    ----------
    graph : Graph
    period : float
        The period ``T0``.
    rates : ndarray, shape (n_edges, M)
        ``rates[e, k]`` is the rate of edge ``e`` on bin ``k``.
    breakpoints : tuple of float
        Known discontinuity times in ``[0, T0)``; must sit on bin edges.
    info : dict
        Free-form provenance, e.g. the example name and effective parameters.
    """

    graph: Graph
    period: float
    rates: np.ndarray
    breakpoints: tuple = ()
    info: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 2 or rates.shape[0] != self.graph.n_edges:
            raise ProtocolError(
                f"rates must have shape (n_edges={self.graph.n_edges}, M), got {rates.shape}")
        if rates.shape[1] < 1:
            raise ProtocolError("need at least one bin")
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ProtocolError("period must be positive and finite")
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "rates", _frozen(rates))
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "info", dict(self.info))

    @property
    def bins(self) -> int:
        return self.rates.shape[1]

    @property
    def dt(self) -> float:
        return self.period / self.bins

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.bins) + 0.5) * self.dt

    def bin_of(self, t: float) -> int:
        """Bin containing time ``t`` (taken modulo the period)."""
        k = int(math.floor((t % self.period) / self.dt))
        return min(max(k, 0), self.bins - 1)

    def rate_matrices(self) -> np.ndarray:
        """Dense rates, shape (M, n, n), zero off ``E``."""
        n = self.graph.n_states
        out = np.zeros((self.bins, n, n))
        for e, (y, z) in enumerate(self.graph.edges):
            out[:, y, z] = self.rates[e]
        return out

    def generators(self) -> np.ndarray:
        """Frozen generators per bin, shape (M, n, n), rows summing to zero."""
        R = self.rate_matrices()
        idx = np.arange(self.graph.n_states)
        R[:, idx, idx] = -R.sum(axis=2)
        return R

    def exit_rates(self) -> np.ndarray:
        """``r(y; t)`` per state and bin, shape (n, M)."""
        out = np.zeros((self.graph.n_states, self.bins))
        for e, (y, _) in enumerate(self.graph.edges):
            out[y] += self.rates[e]
        return out

    def reverse_rates(self) -> np.ndarray:
        """``r(z, y; t)`` for each edge ``(y, z)``; zero where ``(z, y)`` is not an edge."""
        out = np.zeros_like(self.rates)
        for e, (y, z) in enumerate(self.graph.edges):
            f = self.graph.edge_index(z, y)
            if f is not None:
                out[e] = self.rates[f]
        return out

    def envelope(self) -> np.ndarray:
        """Per-edge thinning envelope ``lambda(y, z) = max_t r(y, z; t)``."""
        return self.rates.max(axis=1)


@dataclass(frozen=True)
class Violation:
    assumption: str
    message: str
    edge: int | None = None
    bin: int | None = None

    def __str__(self):
        where = []
        if self.edge is not None:
            where.append(f"edge={self.edge}")
        if self.bin is not None:
            where.append(f"bin={self.bin}")
        suffix = f" [{', '.join(where)}]" if where else ""
        return f"{self.assumption}: {self.message}{suffix}"


def validate_protocol(p: RateProtocol) -> list[Violation]:
    """List every violated standing assumption; empty means valid."""
    out = []
    rates = p.rates
    for e in range(p.graph.n_edges):
        bad_fin = np.flatnonzero(~np.isfinite(rates[e]))
        for k in bad_fin:
            out.append(Violation("A3", f"non-finite rate on {p.graph.edge_label(e)}", e, int(k)))
        bad_pos = np.flatnonzero(np.isfinite(rates[e]) & (rates[e] <= 0))
        for k in bad_pos:
            out.append(Violation("A1/A3", f"rate {rates[e, k]!r} <= 0 on {p.graph.edge_label(e)}",
                                 e, int(k)))
    if not p.graph.is_strongly_connected():
        out.append(Violation("A2", "graph (V, E) is not strongly connected"))
    dt = p.dt
    for b in p.breakpoints:
        if not (0.0 <= b < p.period):
            out.append(Violation("A4", f"breakpoint {b} outside [0, T0)"))
            continue
        j = b / dt
        if abs(j - round(j)) > 1e-9 * max(1.0, j):
            out.append(Violation("A4", f"breakpoint {b} is not on a bin edge"))
    return out


# --- the four two-state examples -------------------------------------------

def _check_params(name, params, required):
    missing = [k for k in required if k not in params]
    if missing:
        raise ProtocolError(f"{name}: missing parameters {missing}")


def build_example(name: str, params: Mapping[str, float], period: float = 1.0,
                  bins: int = 512) -> RateProtocol:
    """Tabulate one of the two-state example protocols at bin midpoints.

    Parameters
    ----------
    name : {"quantum_dot", "defect_center", "stochastic_resonance", "piecewise"}
    params : mapping
        quantum_dot: ``gamma`` (>0), ``x_amp``, optional ``x_offset``, ``x_phase``;
        ``x_t = x_offset + x_amp*sin(2 pi t/T0 + x_phase)``.
        defect_center: ``a0`` (>0), ``gamma`` (|gamma|<1), ``b0`` (>0).
        stochastic_resonance: ``k``; optional ``symmetric`` (bool) puts
        ``exp(-k cos(2 pi t/T0))`` on both edges.
        piecewise: ``h0``, ``a``, ``alpha`` in (0, 1).  ``alpha`` is rounded to
        the nearest multiple of ``1/M`` and the value used is stored in
        ``info["alpha_effective"]``.
    """
    if bins < 1:
        raise ProtocolError("bins must be >= 1")
    if not period > 0:
        raise ProtocolError("period must be positive")
    params = dict(params)
    t = (np.arange(bins) + 0.5) * period / bins
    phase = 2.0 * np.pi * t / period
    breakpoints: tuple = ()
    info: dict[str, Any] = {"example": name, "params": dict(params)}

    if name == "quantum_dot":
        _check_params(name, params, ["gamma", "x_amp"])
        gamma = float(params["gamma"])
        if gamma <= 0:
            raise ProtocolError("quantum_dot: gamma must be positive")
        x = (float(params.get("x_offset", 0.0))
             + float(params["x_amp"]) * np.sin(phase + float(params.get("x_phase", 0.0))))
        # logistic split written to avoid overflow for large |x|
        r01 = gamma * np.exp(-np.logaddexp(0.0, x))
        r10 = gamma * np.exp(x - np.logaddexp(0.0, x))
    elif name == "defect_center":
        _check_params(name, params, ["a0", "gamma", "b0"])
        a0, g, b0 = (float(params[k]) for k in ("a0", "gamma", "b0"))
        if a0 <= 0 or b0 <= 0:
            raise ProtocolError("defect_center: a0 and b0 must be positive")
        if abs(g) >= 1:
            raise ProtocolError("defect_center: |gamma| must be < 1 to keep rates positive")
        r01 = a0 * (1.0 + g * np.sin(phase))
        r10 = np.full(bins, b0)
    elif name == "stochastic_resonance":
        _check_params(name, params, ["k"])
        k = float(params["k"])
        r01 = np.exp(-k * np.cos(phase))
        r10 = r01.copy() if params.get("symmetric", False) else np.exp(k * np.cos(phase))
    elif name == "piecewise":
        _check_params(name, params, ["h0", "a", "alpha"])
        h0, a, alpha = (float(params[k]) for k in ("h0", "a", "alpha"))
        if not 0.0 < alpha < 1.0:
            raise ProtocolError("piecewise: alpha must lie in (0, 1)")
        if bins < 2:
            raise ProtocolError("piecewise: need at least 2 bins")
        j = min(max(int(round(alpha * bins)), 1), bins - 1)
        info["alpha_effective"] = j / bins
        h = np.where(np.arange(bins) < j, h0 - a, h0 + a)
        r01 = np.exp(-h)
        r10 = np.exp(h)
        breakpoints = (0.0, j * period / bins)
    else:
        raise ProtocolError(f"unknown example {name!r}; choose from {EXAMPLES}")

    rates = np.vstack([r01, r10])
    if not np.all(np.isfinite(rates)) or np.any(rates <= 0):
        raise ProtocolError(f"{name}: parameters produce non-positive or non-finite rates")
    return RateProtocol(two_state_graph(), period, rates, breakpoints, info)


def constant_protocol(graph: Graph, rates: Sequence[float], period: float = 1.0,
                      bins: int = 1) -> RateProtocol:
    r = np.repeat(np.asarray(rates, dtype=float)[:, None], bins, axis=1)
    return RateProtocol(graph, period, r)


def reversed_protocol(p: RateProtocol) -> RateProtocol:
    """Rates ``r(y, z; T0 - t)``: bin ``k`` takes bin ``M - 1 - k``."""
    bps = tuple(sorted((p.period - b) % p.period for b in p.breakpoints))
    return RateProtocol(p.graph, p.period, p.rates[:, ::-1], bps,
                        {**p.info, "transform": "reversed"})


def dual_reversed_protocol(p: RateProtocol, w) -> RateProtocol:
    """Rates ``w(y)^-1 r(z, y; T0 - t) w(z)`` with ``w`` evaluated at ``T0 - t``.

    ``w`` is the accompanying distribution (a ``PeriodicDensity`` or an array
    of shape (n_states, M)).
    """
    g = p.graph
    if not g.is_symmetric():
        raise ProtocolError("dual reversal needs E == E_s")
    wv = np.asarray(getattr(w, "values", w), dtype=float)
    if wv.shape != (g.n_states, p.bins):
        raise ProtocolError(f"w has shape {wv.shape}, expected {(g.n_states, p.bins)}")
    if not np.all(wv > 0):
        raise ProtocolError("w must be strictly positive")
    wr = wv[:, ::-1]
    back = p.reverse_rates()[:, ::-1]
    ys = np.array([y for y, _ in g.edges])
    zs = np.array([z for _, z in g.edges])
    rates = back * wr[zs] / wr[ys]
    bps = tuple(sorted((p.period - b) % p.period for b in p.breakpoints))
    return RateProtocol(g, p.period, rates, bps, {**p.info, "transform": "dual_reversed"})


# --- model config files ----------------------------------------------------

def protocol_from_config(cfg: Mapping[str, Any], bins: int | None = None) -> RateProtocol:
    """Build a protocol from a parsed JSON model config.

    ``bins`` overrides the config's ``bins``.  Each entry of a rate table is a
    constant or a per-bin list; lists are refined by repetition to ``bins``
    (default: the least common multiple of the list lengths).
    """
    period = float(cfg.get("period", 1.0))
    if "example" in cfg:
        ex = cfg["example"]
        m = int(bins if bins is not None else cfg.get("bins", 512))
        return build_example(ex["name"], ex.get("params", {}), period, m)
    if "rates" not in cfg:
        raise ProtocolError("config needs either 'example' or 'rates'")
    states = tuple(cfg["states"])
    label_to_idx = {s: i for i, s in enumerate(states)}
    try:
        edges = tuple((label_to_idx[y], label_to_idx[z]) for y, z in cfg["edges"])
    except KeyError as exc:
        raise ProtocolError(f"edge references unknown state {exc}") from None
    graph = Graph(states, edges)
    rows = cfg["rates"]
    if len(rows) != len(edges):
        raise ProtocolError(f"{len(rows)} rate entries for {len(edges)} edges")
    rows = [np.atleast_1d(np.asarray(r, dtype=float)) for r in rows]
    if any(r.ndim != 1 or len(r) == 0 for r in rows):
        raise ProtocolError("each rate entry must be a number or a flat list")
    m = bins if bins is not None else cfg.get("bins")
    if m is None:
        m = math.lcm(*(len(r) for r in rows))
    m = int(m)
    table = []
    for e, r in enumerate(rows):
        if m % len(r):
            raise ProtocolError(f"cannot refine {len(r)} bins to {m} (edge {e})")
        table.append(np.repeat(r, m // len(r)))
    rates = np.array(table)
    return RateProtocol(graph, period, rates, tuple(cfg.get("breakpoints", ())),
                        {"source": "table"})


def load_config(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_protocol(path: str | Path, bins: int | None = None) -> RateProtocol:
    return protocol_from_config(load_config(path), bins)
