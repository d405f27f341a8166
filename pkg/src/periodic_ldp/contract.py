"""Contraction to time-averaged density and flow, two-state closed forms and SCGF.

The contraction

    inf { (1/T0) int_0^T0 sum_E Phi(Q_t, mu_t r_t) dt :
          continuity, mu_t(V) = 1, mean mu = bar_mu, mean Q = bar_q }

is a smooth convex program with linear equality constraints once it is put
on the bin grid.  It is solved by a damped Newton method started from a
strictly positive feasible point; every step lies in the null space of the
constraint matrix, so iterates stay feasible to round-off, and a
fraction-to-the-boundary rule keeps them positive.  The minimizer is interior
(``Phi`` has infinite slope at ``Q = 0`` and blows up at ``mu = 0 < Q``), so
no barrier or floor is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.linalg import expm, null_space

from .grid import PeriodicDensity, PeriodicFlow
from .ldp import RateValue, phi_array
from .model import ProtocolError, RateProtocol
from .steady import oscillatory_state


@dataclass(frozen=True)
class Settings:
    max_iter: int = 200
    tol: float = 1e-14           # half squared Newton decrement
    feas_tol: float = 1e-10
    target_tol: float = 1e-12    # mass / divergence checks on the targets


@dataclass(frozen=True)
class ContractionProblem:
    """Targets for the contraction; ``None`` leaves that average free."""

    protocol: RateProtocol
    bar_mu: np.ndarray | None = None
    bar_q: np.ndarray | None = None
    settings: Settings = field(default_factory=Settings)


@dataclass(frozen=True)
class ContractionResult:
    value: RateValue
    mu: PeriodicDensity | None
    q: PeriodicFlow | None
    residual: float
    iterations: int
    converged: bool
    decrement: float


def _constraints(p: RateProtocol, bar_mu, bar_q):
    """Sparse ``A x = b`` over ``x = [mu.ravel(), Q.ravel()]``."""
    g = p.graph
    n, ne, m = g.n_states, g.n_edges, p.bins
    nmu = n * m
    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def mu_ix(y, k):
        return y * m + (k % m)

    def q_ix(e, k):
        return nmu + e * m + k

    # continuity, one state dropped (implied by the mass rows)
    for y in range(n - 1):
        for k in range(m):
            rows += [r, r]
            cols += [mu_ix(y, k + 1), mu_ix(y, k)]
            vals += [1.0, -1.0]
            for e, (a, b) in enumerate(g.edges):
                if a == y:
                    rows.append(r), cols.append(q_ix(e, k)), vals.append(p.dt)
                elif b == y:
                    rows.append(r), cols.append(q_ix(e, k)), vals.append(-p.dt)
            rhs.append(0.0)
            r += 1
    for k in range(m):
        for y in range(n):
            rows.append(r), cols.append(mu_ix(y, k)), vals.append(1.0)
        rhs.append(1.0)
        r += 1
    if bar_mu is not None:
        for y in range(n - 1):
            for k in range(m):
                rows.append(r), cols.append(mu_ix(y, k)), vals.append(1.0 / m)
            rhs.append(float(bar_mu[y]))
            r += 1
    if bar_q is not None:
        for e in range(ne):
            for k in range(m):
                rows.append(r), cols.append(q_ix(e, k)), vals.append(1.0 / m)
            rhs.append(float(bar_q[e]))
            r += 1
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(r, nmu + ne * m))
    return A, np.array(rhs)


class _Objective:
    """``(1/M) sum Phi(Q, mu(y) r)`` with gradient and Hessian on free variables."""

    def __init__(self, p: RateProtocol, free: np.ndarray):
        g = p.graph
        self.p = p
        self.n, self.ne, self.m = g.n_states, g.n_edges, p.bins
        self.nmu = self.n * self.m
        self.ys = np.array([y for y, _ in g.edges], dtype=int)
        self.r = p.rates
        self.free = free
        # flat index of mu(y, k) paired with each Q(e, k)
        self.mu_of_q = (self.ys[:, None] * self.m + np.arange(self.m)[None, :]).ravel()

    def split(self, x):
        return x[:self.nmu].reshape(self.n, self.m), x[self.nmu:].reshape(self.ne, self.m)

    def value(self, x) -> float:
        mu, q = self.split(x)
        return float(np.sum(phi_array(q, mu[self.ys] * self.r, zero=0.0)) / self.m)

    def grad_hess(self, x):
        mu, q = self.split(x)
        base = mu[self.ys] * self.r
        qpos = q > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            gq = np.where(qpos, np.log(q / base), 0.0)
            gmu_terms = self.r - np.where(qpos, q / mu[self.ys], 0.0)
        gmu = np.zeros((self.n, self.m))
        np.add.at(gmu, self.ys, gmu_terms)
        grad = np.concatenate([gmu.ravel(), gq.ravel()]) / self.m

        # per-term Hessian [[1/Q, -1/mu], [-1/mu, Q/mu^2]] on (Q, mu(y))
        qi = self.nmu + np.arange(self.ne * self.m)
        mi = self.mu_of_q
        qf, muf = q.ravel(), mu[self.ys].ravel()
        live = qf > 0
        qi, mi, qf, muf = qi[live], mi[live], qf[live], muf[live]
        rows = np.concatenate([qi, qi, mi, mi])
        cols = np.concatenate([qi, mi, qi, mi])
        vals = np.concatenate([1.0 / qf, -1.0 / muf, -1.0 / muf, qf / muf ** 2]) / self.m
        size = self.nmu + self.ne * self.m
        H = sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))
        return grad, H


def _target_checks(prob: ContractionProblem):
    """Normalize targets; return (bar_mu, bar_q, reason-if-infinite)."""
    g = prob.protocol.graph
    tol = prob.settings.target_tol
    bar_mu = None if prob.bar_mu is None else np.asarray(prob.bar_mu, dtype=float)
    bar_q = None if prob.bar_q is None else np.asarray(prob.bar_q, dtype=float)
    if bar_mu is not None:
        if bar_mu.shape != (g.n_states,):
            raise ValueError("bar_mu needs one entry per state")
        if np.any(bar_mu < 0) or abs(bar_mu.sum() - 1.0) > tol:
            return bar_mu, bar_q, "bar_mu is not a probability vector"
    if bar_q is not None:
        if bar_q.shape != (g.n_edges,):
            raise ValueError("bar_q needs one entry per edge")
        if np.any(bar_q < 0):
            return bar_mu, bar_q, "bar_q has negative entries"
        div = np.zeros(g.n_states)
        for e, (y, z) in enumerate(g.edges):
            div[y] += bar_q[e]
            div[z] -= bar_q[e]
        if np.max(np.abs(div)) > tol * max(1.0, np.max(bar_q)):
            return bar_mu, bar_q, "div bar_q != 0"
    return bar_mu, bar_q, None


def _fixed_zero(prob: ContractionProblem, bar_mu, bar_q):
    """Variables forced to zero by zero targets, or an infeasibility reason."""
    p = prob.protocol
    g = p.graph
    m = p.bins
    fixed = np.zeros(g.n_states * m + g.n_edges * m, dtype=bool)
    if bar_q is not None:
        for e in np.flatnonzero(bar_q == 0):
            fixed[g.n_states * m + e * m: g.n_states * m + (e + 1) * m] = True
    if bar_mu is not None:
        for y in np.flatnonzero(bar_mu == 0):
            fixed[y * m:(y + 1) * m] = True
            for e, (a, b) in enumerate(g.edges):
                if y in (a, b):
                    if bar_q is not None and bar_q[e] > 0:
                        return fixed, "flow through a state with zero mean density"
                    fixed[g.n_states * m + e * m: g.n_states * m + (e + 1) * m] = True
    return fixed, None


def _start(prob: ContractionProblem, bar_mu, bar_q) -> np.ndarray:
    """Constant-in-time point matching the targets (free ones from the steady state)."""
    p = prob.protocol
    m = p.bins
    if bar_mu is None or bar_q is None:
        ss = oscillatory_state(p)
        mu0 = ss.pi.time_average() if bar_mu is None else bar_mu
        q0 = ss.q_pi.time_average() if bar_q is None else bar_q
    else:
        mu0, q0 = bar_mu, bar_q
    return np.concatenate([np.repeat(mu0[:, None], m, axis=1).ravel(),
                           np.repeat(q0[:, None], m, axis=1).ravel()])


def contract(prob: ContractionProblem) -> ContractionResult:
    """Minimize the time-averaged rate under the given averages.

    Returns ``+inf`` (with reason) for infeasible targets.  ``converged`` is
    False if the iteration budget ran out; the value is still reported.
    """
    p = prob.protocol
    s = prob.settings
    bar_mu, bar_q, reason = _target_checks(prob)
    if reason is None:
        fixed, reason = _fixed_zero(prob, bar_mu, bar_q)
    if reason is not None:
        return ContractionResult(RateValue.infinite(reason), None, None, math.inf, 0, True, 0.0)

    A, b = _constraints(p, bar_mu, bar_q)
    free = ~fixed
    x = _start(prob, bar_mu, bar_q)
    x[fixed] = 0.0
    Af = A[:, free].toarray()
    # remove any drift of the start from the affine set
    x[free] -= np.linalg.lstsq(Af, A @ x - b, rcond=None)[0]
    if np.any(x[free] <= 0):
        raise ProtocolError("could not find a strictly positive feasible start")
    Z = null_space(Af)
    obj = _Objective(p, free)

    it, dec, converged = 0, math.inf, False
    f = obj.value(x)
    for it in range(1, s.max_iter + 1):
        grad, H = obj.grad_hess(x)
        gz = Z.T @ grad[free]
        Hf = H[free][:, free]
        Hz = Z.T @ (Hf @ Z)
        Hz += 1e-14 * np.trace(Hz) / max(len(Hz), 1) * np.eye(len(Hz))
        try:
            dy = -np.linalg.solve(Hz, gz)
        except np.linalg.LinAlgError:
            dy = -np.linalg.lstsq(Hz, gz, rcond=None)[0]
        dec = float(-gz @ dy) / 2.0
        if dec < s.tol:
            converged = True
            break
        dx = Z @ dy
        xf = x[free]
        neg = dx < 0
        step = min(1.0, 0.99 * float(np.min(-xf[neg] / dx[neg]))) if np.any(neg) else 1.0
        while True:
            trial = x.copy()
            trial[free] = xf + step * dx
            ft = obj.value(trial)
            if ft <= f - 0.25 * step * 2.0 * dec or step < 1e-12:
                break
            step *= 0.5
        if step < 1e-12:
            # no further progress possible at double precision
            converged = dec < 1e-10
            break
        x, f = trial, ft
    residual = float(np.max(np.abs(A @ x - b))) if len(b) else 0.0
    mu, q = obj.split(x)
    g = p.graph
    return ContractionResult(RateValue(max(f, 0.0)), PeriodicDensity(g, p.period, mu),
                             PeriodicFlow(g, p.period, q), residual, it,
                             converged and residual < s.feas_tol, dec)


# --- two-state closed forms ---------------------------------------------------

def _symmetric_two_state(p: RateProtocol) -> float:
    """Return ``r_bar`` after checking ``r_t(0,1) = r_t(1,0)`` on every bin."""
    g = p.graph
    if g.n_states != 2:
        raise ProtocolError("needs a two-state protocol")
    e01, e10 = g.edge_index(0, 1), g.edge_index(1, 0)
    if e01 is None or e10 is None:
        raise ProtocolError("needs both edges 0->1 and 1->0")
    r01, r10 = p.rates[e01], p.rates[e10]
    if not np.allclose(r01, r10, rtol=1e-12, atol=0.0):
        raise ProtocolError("needs a symmetric protocol r_t(0,1) = r_t(1,0)")
    return float(r01.mean())


@dataclass(frozen=True)
class FlowRate:
    value: float
    mu: PeriodicDensity
    q: PeriodicFlow


def flow_rate_closed_form(bar_q: float, r_bar: float) -> float:
    """``2Q log(2Q/r) - 2Q + r``."""
    if bar_q < 0:
        raise ValueError("bar_q must be >= 0")
    if bar_q == 0:
        return r_bar
    return 2 * bar_q * math.log(2 * bar_q / r_bar) - 2 * bar_q + r_bar


def two_state_flow_rate(p: RateProtocol, bar_q: float) -> FlowRate:
    """Closed-form flow-only rate and its candidate minimizer.

    The candidate is ``mu_t = (1/2, 1/2)`` and ``Q_t = r_t bar_q / r_bar``.
    """
    r_bar = _symmetric_two_state(p)
    g = p.graph
    mu = PeriodicDensity(g, p.period, np.full((2, p.bins), 0.5))
    q = PeriodicFlow(g, p.period, p.rates * (bar_q / r_bar))
    return FlowRate(flow_rate_closed_form(bar_q, r_bar), mu, q)


def homogenized_rate(bar_mu, bar_q: float, r_bar: float) -> float:
    """``Q log(Q^2/(mu0 mu1 r^2)) - 2Q + r`` for a common flow ``Q`` on both edges."""
    m0, m1 = float(bar_mu[0]), float(bar_mu[1])
    if bar_q == 0:
        return r_bar
    if m0 <= 0 or m1 <= 0:
        return math.inf
    return bar_q * math.log(bar_q ** 2 / (m0 * m1 * r_bar ** 2)) - 2 * bar_q + r_bar


def inf_homogenized(bar_q: float, r_bar: float) -> float:
    """Numerical ``inf`` over ``bar_mu`` of :func:`homogenized_rate`."""
    res = optimize.minimize_scalar(lambda a: homogenized_rate((a, 1 - a), bar_q, r_bar),
                                   bounds=(1e-9, 1 - 1e-9), method="bounded",
                                   options={"xatol": 1e-12})
    return float(res.fun)


@dataclass
class BasketReport:
    rows: list = field(default_factory=list)   # (mu0, bar_q, I_bar, I_hom, converged)
    tol: float = 1e-8

    @property
    def ok(self) -> bool:
        return all(r[2] <= r[3] + self.tol for r in self.rows)

    @property
    def strict(self) -> int:
        return sum(1 for r in self.rows if r[2] < r[3] - self.tol)

    @property
    def worst(self) -> float:
        return max((r[2] - r[3] for r in self.rows), default=-math.inf)


def basket_check(p: RateProtocol, samples: int = 50, seed: int = 0,
                 settings: Settings | None = None, tol: float = 1e-8) -> BasketReport:
    """Compare the contraction with the homogenized upper bound on random targets."""
    r_bar = _symmetric_two_state(p)
    rng = np.random.default_rng(np.random.Philox(seed))
    rep = BasketReport(tol=tol)
    for _ in range(samples):
        m0 = float(rng.uniform(0.1, 0.9))
        qb = float(rng.uniform(0.1, 2.0) * r_bar)
        res = contract(ContractionProblem(p, np.array([m0, 1 - m0]), np.array([qb, qb]),
                                          settings or Settings()))
        rep.rows.append((m0, qb, res.value.value, homogenized_rate((m0, 1 - m0), qb, r_bar),
                         res.converged))
    return rep


# --- scaled cumulant generating function --------------------------------------

def tilted_generators(p: RateProtocol, F) -> np.ndarray:
    """Per-bin generators with off-diagonal ``r e^F`` and the original diagonal."""
    F = np.broadcast_to(np.asarray(F, dtype=float), p.rates.shape)
    L = p.generators()
    for e, (y, z) in enumerate(p.graph.edges):
        L[:, y, z] = p.rates[e] * np.exp(F[e])
    return L


def scgf(p: RateProtocol, F) -> float:
    """Log spectral radius of the tilted one-period monodromy.

    The running product is renormalized each bin and the scale kept in log
    form, so large tilts do not overflow.
    """
    L = tilted_generators(p, F)
    n = p.graph.n_states
    prod = np.eye(n)
    log_scale = 0.0
    for Lk in L:
        prod = prod @ expm(p.dt * Lk)
        s = np.abs(prod).max()
        prod /= s
        log_scale += math.log(s)
    rho = float(np.max(np.abs(np.linalg.eigvals(prod))))
    return log_scale + math.log(rho)


def scgf_legendre(p: RateProtocol, target: float, tilt=1.0) -> tuple[float, float]:
    """``sup_s [s * target - scgf(s * tilt)]`` and the maximizing ``s``."""
    tilt = np.asarray(tilt, dtype=float)
    res = optimize.minimize_scalar(lambda s: scgf(p, s * tilt) - s * target,
                                   bracket=(-1.0, 1.0), options={"xtol": 1e-12})
    return float(-res.fun), float(res.x)
