"""Binned densities, flows and currents on the periodic time grid.

All three carry values per bin: ``values[item, k]`` is the (constant) value on
bin ``k``.  Time derivatives of densities are periodic forward differences,
``(mu[:, k+1] - mu[:, k]) * M / T0``; the continuity equation on the grid is

    (mu[:, k+1] - mu[:, k]) * M / T0 + div Q[:, k] = 0.

Test functions paired with a density use the backward difference, which is
the (negative) adjoint of the forward one, so ``sum_k mu_k . D^- phi_k`` and
``sum_k div Q_k . phi_k`` cancel exactly on continuity-feasible pairs.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .model import Graph

CSV_COLUMNS = ("item", "bin", "value")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Tolerances:
    """Grid tolerances.

    ``cont_coeff`` sets the continuity tolerance ``cont_coeff / M``: the
    forward difference of a smooth density misses its derivative by
    ``O(T0/M)``.
    """

    mass: float = 1e-12
    zero: float = 1e-12
    cont_coeff: float = 10.0

    def cont(self, bins: int) -> float:
        return self.cont_coeff / bins


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True)
class PeriodicDensity:
    graph: Graph
    period: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.graph.n_states:
            raise ValueError(f"density needs shape (n_states, M), got {v.shape}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.period / self.bins

    def time_average(self) -> np.ndarray:
        return self.values.mean(axis=1)


@dataclass(frozen=True)
class PeriodicFlow:
    graph: Graph
    period: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.graph.n_edges:
            raise ValueError(f"flow needs shape (n_edges, M), got {v.shape}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.period / self.bins

    def time_average(self) -> np.ndarray:
        return self.values.mean(axis=1)


@dataclass(frozen=True)
class PeriodicCurrent:
    """Antisymmetric current stored once per unordered pair ``(a, b)``, ``a < b``.

    ``values[p, k]`` is ``J(a, b)`` on bin ``k``; ``J(b, a)`` is its negative.
    """

    graph: Graph
    period: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != len(self.graph.pairs):
            raise ValueError(f"current needs shape (n_pairs, M), got {v.shape}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.period / self.bins

    def oriented(self, y: int, z: int) -> np.ndarray:
        """``J(y, z)`` over the bins."""
        a, b = min(y, z), max(y, z)
        p = self.graph.pairs.index((a, b))
        return self.values[p] if y == a else -self.values[p]

    def on_edges(self) -> np.ndarray:
        """``J(y, z)`` for every edge of ``E``, shape (n_edges, M)."""
        return np.vstack([self.oriented(y, z) for y, z in self.graph.edges]) \
            if self.graph.n_edges else np.zeros((0, self.bins))

    def time_average(self) -> np.ndarray:
        return self.values.mean(axis=1)


def flow_to_current(q: PeriodicFlow) -> PeriodicCurrent:
    """Antisymmetrization ``J(y,z) = Q(y,z) - Q(z,y)``."""
    g = q.graph
    out = np.zeros((len(g.pairs), q.bins))
    for p, (a, b) in enumerate(g.pairs):
        e = g.edge_index(a, b)
        f = g.edge_index(b, a)
        if e is not None:
            out[p] += q.values[e]
        if f is not None:
            out[p] -= q.values[f]
    return PeriodicCurrent(g, q.period, out)


def _div_all(x: PeriodicFlow | PeriodicCurrent) -> np.ndarray:
    g = x.graph
    out = np.zeros((g.n_states, x.bins))
    if isinstance(x, PeriodicCurrent):
        for p, (a, b) in enumerate(g.pairs):
            out[a] += x.values[p]
            out[b] -= x.values[p]
    else:
        for e, (y, z) in enumerate(g.edges):
            out[y] += x.values[e]
            out[z] -= x.values[e]
    return out


def divergence(x: PeriodicFlow | PeriodicCurrent, state: int | None = None,
               bin: int | None = None):
    """Out-sum minus in-sum.

    With ``state`` and ``bin`` given returns a float, otherwise the full
    (n_states, M) array.
    """
    d = _div_all(x)
    if state is None and bin is None:
        return d
    if state is None or bin is None:
        raise ValueError("give both state and bin, or neither")
    return float(d[state, bin])


def forward_difference(values: np.ndarray, period: float) -> np.ndarray:
    m = values.shape[-1]
    return (np.roll(values, -1, axis=-1) - values) * (m / period)


def backward_difference(values: np.ndarray, period: float) -> np.ndarray:
    m = values.shape[-1]
    return (values - np.roll(values, 1, axis=-1)) * (m / period)


def _check_grid(mu: PeriodicDensity, x) -> None:
    if mu.graph != x.graph:
        raise ValueError("density and flow/current live on different graphs")
    if mu.bins != x.bins or mu.period != x.period:
        raise ValueError("density and flow/current use different grids")


def continuity_residuals(mu: PeriodicDensity, x: PeriodicFlow | PeriodicCurrent) -> np.ndarray:
    _check_grid(mu, x)
    return forward_difference(mu.values, mu.period) + _div_all(x)


def continuity_residual(mu: PeriodicDensity, x: PeriodicFlow | PeriodicCurrent) -> float:
    """Max-norm of ``d_t mu + div x`` over states and bins."""
    return float(np.max(np.abs(continuity_residuals(mu, x))))


@dataclass
class Membership:
    """Outcome of a Lambda / Lambda_a membership check."""

    violations: list = field(default_factory=list)
    continuity: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    @property
    def reason(self) -> str | None:
        return "; ".join(self.violations) if self.violations else None


def _density_checks(mu: PeriodicDensity, tol: Tolerances, out: list) -> None:
    v = mu.values
    if np.any(v < -tol.zero):
        out.append("(i) density has negative entries")
    mass_err = np.abs(v.sum(axis=0) - 1.0)
    if np.any(mass_err > tol.mass):
        k = int(np.argmax(mass_err))
        out.append(f"(i) bin {k} has mass {v[:, k].sum()!r} != 1")


def lambda_membership(mu: PeriodicDensity, q: PeriodicFlow,
                      tol: Tolerances = DEFAULT_TOL) -> Membership:
    """Check items (i), (iii), (iv) of the set Lambda at grid resolution.

    Item (ii) (absolute continuity in time) holds by construction on the grid.
    """
    _check_grid(mu, q)
    out: list[str] = []
    _density_checks(mu, tol, out)
    if np.any(q.values < -tol.zero):
        out.append("flow has negative entries")
    res = continuity_residual(mu, q)
    if res > tol.cont(mu.bins):
        out.append(f"(iii) continuity residual {res:.3e} > {tol.cont(mu.bins):.3e}")
    g = q.graph
    for e, (y, _) in enumerate(g.edges):
        bad = (mu.values[y] < tol.zero) & (q.values[e] >= tol.zero)
        if np.any(bad):
            out.append(f"(iv) flow on {g.edge_label(e)} with zero density, bin {int(np.argmax(bad))}")
            break
    return Membership(out, res)


def lambda_a_membership(mu: PeriodicDensity, j: PeriodicCurrent,
                        tol: Tolerances = DEFAULT_TOL) -> Membership:
    """Check items (i), (iii), (iv), (v) of the set Lambda_a."""
    _check_grid(mu, j)
    out: list[str] = []
    _density_checks(mu, tol, out)
    res = continuity_residual(mu, j)
    if res > tol.cont(mu.bins):
        out.append(f"(iii) continuity residual {res:.3e} > {tol.cont(mu.bins):.3e}")
    g = j.graph
    for p, (a, b) in enumerate(g.pairs):
        jab = j.values[p]
        # (iv): mu(y) = 0 forces J(y, .) <= 0
        if np.any((mu.values[a] < tol.zero) & (jab > tol.zero)) or \
                np.any((mu.values[b] < tol.zero) & (-jab > tol.zero)):
            out.append(f"(iv) outgoing current from an empty state on {g.pair_label(p)}")
        ab = g.edge_index(a, b) is not None
        ba = g.edge_index(b, a) is not None
        if ab and not ba and np.any(jab < -tol.zero):
            out.append(f"(v) negative current against one-way edge {g.pair_label(p)}")
        if ba and not ab and np.any(jab > tol.zero):
            out.append(f"(v) positive current against one-way edge {g.pair_label(p)}")
    return Membership(out, res)


# --- CSV -------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".16e")


def _labels_for(kind: str, g: Graph) -> list[str]:
    if kind == "density":
        return [g.label(i) for i in range(g.n_states)]
    if kind == "flow":
        return [g.edge_label(e) for e in range(g.n_edges)]
    return [g.pair_label(p) for p in range(len(g.pairs))]


def _kind(obj) -> str:
    if isinstance(obj, PeriodicDensity):
        return "density"
    if isinstance(obj, PeriodicFlow):
        return "flow"
    return "current"


def to_csv(obj, header: dict | None = None) -> str:
    """Serialize as ``item,bin,value`` rows preceded by ``# key=value`` lines.

    Items are state labels, ``y->z`` for flow edges and ``a~b`` for currents
    (value is ``J(a, b)`` with ``a`` the lower-indexed state).  Values use
    ``%.16e`` (17 significant digits) so a round trip is exact.
    """
    buf = io.StringIO()
    for k, v in (header or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for label, row in zip(_labels_for(_kind(obj), obj.graph), obj.values):
        for k, v in enumerate(row):
            w.writerow((label, k, _fmt(v)))
    return buf.getvalue()


def _read_rows(text: str) -> Iterable[tuple[str, int, float]]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines)
    head = next(reader)
    if tuple(head) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {head}")
    for item, k, v in reader:
        yield item, int(k), float(v)


def from_csv(text: str, kind: str, graph: Graph, period: float):
    """Parse CSV produced by :func:`to_csv`; ``kind`` is density, flow or current."""
    cls = {"density": PeriodicDensity, "flow": PeriodicFlow, "current": PeriodicCurrent}[kind]
    labels = _labels_for(kind, graph)
    n_items = len(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    rows = list(_read_rows(text))
    m = max(k for _, k, _ in rows) + 1
    vals = np.full((n_items, m), np.nan)
    for item, k, v in rows:
        if item not in index:
            raise ValueError(f"unknown item {item!r}")
        vals[index[item], k] = v
    if np.isnan(vals).any():
        raise ValueError("CSV does not cover every (item, bin)")
    return cls(graph, period, vals)
