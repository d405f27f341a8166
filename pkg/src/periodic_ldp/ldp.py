"""Rate functionals for the empirical density/flow and density/current pairs.

Every time integral is the bin sum ``dt * sum_k``, which is exact for the
piecewise-constant data model.  Infinite values are tagged with the reason.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import (DEFAULT_TOL, PeriodicCurrent, PeriodicDensity, PeriodicFlow, Tolerances,
                   backward_difference, divergence, lambda_a_membership, lambda_membership)
from .model import ProtocolError, RateProtocol

F_MAX = 40.0


@dataclass(frozen=True)
class RateValue:
    """Value in ``[0, +inf]``; ``reason`` says why it is infinite."""

    value: float
    reason: str | None = None

    @classmethod
    def infinite(cls, reason: str) -> "RateValue":
        return cls(math.inf, reason)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def __float__(self):
        return float(self.value)


# --- scalar cost functions --------------------------------------------------

def phi_array(q, p, zero: float = DEFAULT_TOL.zero) -> np.ndarray:
    """Vectorized ``Phi(q, p)``; ``+inf`` where ``p == 0 < q``.

    Entries below ``zero`` are snapped to 0 before choosing the branch.
    """
    q = np.where(np.abs(q) < zero, 0.0, np.asarray(q, dtype=float))
    p = np.where(np.abs(p) < zero, 0.0, np.asarray(p, dtype=float))
    out = np.where(q == 0.0, p, np.inf)
    pos = (q > 0) & (p > 0)
    qq, pp = q[pos], p[pos]
    out = np.array(out, dtype=float)
    out[pos] = qq * np.log(qq / pp) - (qq - pp)
    return out


def phi_fn(q: float, p: float) -> RateValue:
    """``Phi(q, p) = q log(q/p) - (q - p)``, with ``Phi(0, p) = p``."""
    if q < 0 or p < 0:
        raise ValueError("phi_fn needs q, p >= 0")
    v = float(phi_array(q, p))
    if math.isinf(v):
        return RateValue.infinite("Phi(q, 0) with q > 0")
    return RateValue(v)


def psi_array(u, ubar, a, zero: float = DEFAULT_TOL.zero) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    ubar = np.asarray(ubar, dtype=float)
    a = np.where(np.asarray(a, dtype=float) < zero, 0.0, np.asarray(a, dtype=float))
    u, ubar, a = np.broadcast_arrays(u, ubar, a)
    out = np.empty(u.shape)
    pos = a > 0
    up, ubp, ap = u[pos], ubar[pos], a[pos]
    out[pos] = (up * (np.arcsinh(up / ap) - np.arcsinh(ubp / ap))
                - (np.hypot(ap, up) - np.hypot(ap, ubp)))
    out[~pos] = phi_array(np.abs(u[~pos]), np.abs(ubar[~pos]), zero)
    return out


def psi_fn(u: float, ubar: float, a: float) -> RateValue:
    """``Psi(u, ubar; a)``; reduces to ``Phi(|u|, |ubar|)`` when ``a = 0``."""
    if a < 0:
        raise ValueError("psi_fn needs a >= 0")
    v = float(psi_array(u, ubar, a))
    if math.isinf(v):
        return RateValue.infinite("Phi(|u|, 0) with u != 0")
    return RateValue(v)


# --- helpers ----------------------------------------------------------------

def _sources(g) -> np.ndarray:
    return np.array([y for y, _ in g.edges], dtype=int)


def _targets(g) -> np.ndarray:
    return np.array([z for _, z in g.edges], dtype=int)


def _check_protocol(x, p: RateProtocol) -> None:
    if x.graph != p.graph or x.bins != p.bins or x.period != p.period:
        raise ValueError("data and protocol use different graphs or grids")


def _phi_integral(mu_vals, q_vals, p: RateProtocol) -> float:
    terms = phi_array(q_vals, mu_vals[_sources(p.graph)] * p.rates)
    return float(p.dt * np.sum(terms))


# --- level 2.5 with flows ---------------------------------------------------

def rate_I(mu: PeriodicDensity, q: PeriodicFlow, p: RateProtocol,
           tol: Tolerances = DEFAULT_TOL) -> RateValue:
    """``int_0^T0 sum_E Phi(Q_t(y,z), mu_t(y) r(y,z;t)) dt``; ``+inf`` off Lambda."""
    _check_protocol(mu, p)
    _check_protocol(q, p)
    mem = lambda_membership(mu, q, tol)
    if not mem.ok:
        return RateValue.infinite(mem.reason)
    v = _phi_integral(mu.values, q.values, p)
    if math.isinf(v):
        return RateValue.infinite("Phi(q, 0) with q > 0")
    return RateValue(max(v, 0.0))


# --- level 2.5 with currents -------------------------------------------------

def _pair_data(mu: PeriodicDensity, p: RateProtocol):
    """Per unordered pair ``(a, b)``: ``r(a,b)``, ``r(b,a)`` (0 off E), ``mu(a)``, ``mu(b)``."""
    g = p.graph
    m = p.bins
    rab = np.zeros((len(g.pairs), m))
    rba = np.zeros((len(g.pairs), m))
    for i, (a, b) in enumerate(g.pairs):
        e, f = g.edge_index(a, b), g.edge_index(b, a)
        if e is not None:
            rab[i] = p.rates[e]
        if f is not None:
            rba[i] = p.rates[f]
    ia = np.array([a for a, _ in g.pairs], dtype=int)
    ib = np.array([b for _, b in g.pairs], dtype=int)
    return rab, rba, mu.values[ia], mu.values[ib]


def q_from_current(mu: PeriodicDensity, j: PeriodicCurrent, p: RateProtocol) -> PeriodicFlow:
    """Minimal-cost flow ``Q^{J,mu} = (J + sqrt(J^2 + 4 mu(y)mu(z) r(y,z) r(z,y)))/2``.

    Evaluated as ``2c / (sqrt(J^2 + 4c) - J)`` for negative ``J`` to avoid
    cancellation.
    """
    _check_protocol(mu, p)
    _check_protocol(j, p)
    g = p.graph
    jv = j.on_edges()
    c = mu.values[_sources(g)] * mu.values[_targets(g)] * p.rates * p.reverse_rates()
    s = np.sqrt(jv * jv + 4.0 * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = np.where(s - jv > 0, 2.0 * c / (s - jv), 0.0)
    qv = np.where(jv >= 0, 0.5 * (jv + s), neg)
    return PeriodicFlow(g, p.period, qv)


@dataclass(frozen=True)
class HatValue:
    """Current-level functional in both forms.

    ``value`` is the public result (the Phi form); ``difference`` is
    ``|phi_form - psi_form|``.
    """

    value: RateValue
    phi_form: float
    psi_form: float
    difference: float


def rate_I_hat_psi(mu: PeriodicDensity, j: PeriodicCurrent, p: RateProtocol) -> float:
    """``1/2 sum_{E_s} int Psi(J, J^mu; a^mu) dt`` without membership checks."""
    rab, rba, ma, mb = _pair_data(mu, p)
    jmu = ma * rab - mb * rba
    a = 2.0 * np.sqrt(ma * mb * rab * rba)
    # Psi is even in (u, ubar), so each unordered pair counts once
    return float(p.dt * np.sum(psi_array(j.values, jmu, a)))


def rate_I_hat(mu: PeriodicDensity, j: PeriodicCurrent, p: RateProtocol,
               tol: Tolerances = DEFAULT_TOL) -> HatValue:
    _check_protocol(mu, p)
    _check_protocol(j, p)
    mem = lambda_a_membership(mu, j, tol)
    if not mem.ok:
        inf = RateValue.infinite(mem.reason)
        return HatValue(inf, math.inf, math.inf, 0.0)
    qj = q_from_current(mu, j, p)
    phi_form = _phi_integral(mu.values, qj.values, p)
    psi_form = rate_I_hat_psi(mu, j, p)
    if math.isinf(phi_form):
        return HatValue(RateValue.infinite("Phi(q, 0) with q > 0"), phi_form, psi_form, 0.0)
    return HatValue(RateValue(max(phi_form, 0.0)), phi_form, psi_form, abs(phi_form - psi_form))


def minimal_flow_oracle(mu: PeriodicDensity, j: PeriodicCurrent, p: RateProtocol,
                        iters: int = 200) -> PeriodicFlow:
    """Brute-force minimal flow ``Q = J+ + S`` for a given current.

    For each pair and bin the symmetric part ``s >= 0`` minimizes
    ``Phi(j+ + s, mu(y) r(y,z)) + Phi(j- + s, mu(z) r(z,y))``.  The objective
    is convex in ``s``, so its derivative
    ``log((j+ + s)(j- + s)) - log(mu(y) mu(z) r(y,z) r(z,y))`` is increasing and
    the root is found by bisection (to the last bit of ``s``).
    """
    _check_protocol(mu, p)
    _check_protocol(j, p)
    g = p.graph
    rab, rba, ma, mb = _pair_data(mu, p)
    jp = np.maximum(j.values, 0.0)
    jm = np.maximum(-j.values, 0.0)
    c = ma * mb * rab * rba
    lo = np.zeros_like(c)
    hi = np.sqrt(c) + 1.0
    live = c > 0
    # no interior minimum: derivative positive already at s = 0
    live &= jp * jm < c
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = (jp + mid) * (jm + mid) > c
        hi = np.where(live & up, mid, hi)
        lo = np.where(live & ~up, mid, lo)
    s = np.where(live, 0.5 * (lo + hi), 0.0)
    out = np.zeros((g.n_edges, p.bins))
    for i, (a, b) in enumerate(g.pairs):
        e, f = g.edge_index(a, b), g.edge_index(b, a)
        if e is not None:
            out[e] = jp[i] + s[i]
        if f is not None:
            out[f] = jm[i] + s[i]
    return PeriodicFlow(g, p.period, out)


# --- variational representation ----------------------------------------------

@dataclass(frozen=True)
class TestFunctionPair:
    """``phi`` per (state, bin) and ``F`` per (edge, bin)."""

    phi: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        F = np.asarray(self.F, dtype=float)
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(F))):
            raise ValueError("test functions must be finite")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "F", F)


def tilted_rate(mu: PeriodicDensity, q: PeriodicFlow, tf: TestFunctionPair,
                p: RateProtocol) -> float:
    """``-mu(d_t phi) + div Q(phi) + Q(F) - mu(r^F - r)`` by bin sums.

    ``d_t phi`` is the backward difference, the adjoint of the forward
    difference used for the continuity equation.
    """
    _check_protocol(mu, p)
    _check_protocol(q, p)
    dt = p.dt
    ys = _sources(p.graph)
    a = -np.sum(mu.values * backward_difference(tf.phi, p.period))
    b = np.sum(divergence(q) * tf.phi)
    c = np.sum(q.values * tf.F)
    d = np.sum(mu.values[ys] * p.rates * np.expm1(tf.F))
    return float(dt * (a + b + c - d))


def analytic_test_function(mu: PeriodicDensity, q: PeriodicFlow, p: RateProtocol,
                           f_max: float = F_MAX) -> TestFunctionPair:
    """``F = log(Q/(mu r))`` clamped to ``[-f_max, f_max]`` and ``phi = 0``."""
    base = mu.values[_sources(p.graph)] * p.rates
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.log(q.values / base)
    F = np.where(np.isnan(F), 0.0, F)
    F = np.clip(F, -f_max, f_max)
    return TestFunctionPair(np.zeros_like(mu.values), F)


def random_test_function(p: RateProtocol, rng: np.random.Generator, modes: int = 3,
                         scale: float = 1.0) -> TestFunctionPair:
    """Smooth random ``phi`` (few Fourier modes) and Gaussian ``F``."""
    g = p.graph
    t = p.midpoints() / p.period
    phi = np.zeros((g.n_states, p.bins))
    for mode in range(1, modes + 1):
        c = rng.normal(size=(g.n_states, 2)) * scale / mode
        phi += c[:, :1] * np.cos(2 * np.pi * mode * t) + c[:, 1:] * np.sin(2 * np.pi * mode * t)
    F = rng.normal(scale=0.5 * scale, size=(g.n_edges, p.bins))
    return TestFunctionPair(phi, F)


@dataclass(frozen=True)
class VariationalBound:
    value: float
    analytic: float
    trials: np.ndarray


def variational_lower_bound(mu: PeriodicDensity, q: PeriodicFlow, p: RateProtocol,
                            trials: int = 32, seed: int = 0,
                            f_max: float = F_MAX) -> VariationalBound:
    """Largest tilted rate over random test functions and the analytic ``F``."""
    rng = np.random.default_rng(np.random.Philox(seed))
    vals = np.array([tilted_rate(mu, q, random_test_function(p, rng), p)
                     for _ in range(trials)])
    analytic = tilted_rate(mu, q, analytic_test_function(mu, q, p, f_max), p)
    best = max(analytic, float(vals.max()) if len(vals) else -math.inf)
    return VariationalBound(best, analytic, vals)


# --- time reversal ------------------------------------------------------------

def theta_reverse(mu: PeriodicDensity, q: PeriodicFlow):
    """``(mu_{T0-t}, Q_{T0-t}(z, y))`` on the bin grid."""
    g = q.graph
    if not g.is_symmetric():
        raise ProtocolError("flow reversal needs E == E_s")
    rev = g.reverse_index()
    return (PeriodicDensity(mu.graph, mu.period, mu.values[:, ::-1]),
            PeriodicFlow(g, q.period, q.values[rev, ::-1]))


def theta_reverse_current(mu: PeriodicDensity, j: PeriodicCurrent):
    """``(mu_{T0-t}, -J_{T0-t})``."""
    return (PeriodicDensity(mu.graph, mu.period, mu.values[:, ::-1]),
            PeriodicCurrent(j.graph, j.period, -j.values[:, ::-1]))
