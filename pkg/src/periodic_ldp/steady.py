"""Oscillatory steady state, accompanying distribution and two-state closed forms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .grid import PeriodicDensity, PeriodicFlow
from .model import RateProtocol


class SteadyStateError(RuntimeError):
    """A stationary vector could not be determined reliably."""


@dataclass(frozen=True)
class Propagator:
    """Per-bin transition matrices of a piecewise-constant protocol.

    ``steps[k] = expm(dt * L_k)`` maps the law at the start of bin ``k`` to the
    law at its end (row-vector convention).  ``monodromy`` is the ordered
    product over one period, i.e. the kernel of ``xi_{n T0}``.
    """

    steps: np.ndarray
    half_steps: np.ndarray
    monodromy: np.ndarray

    def between(self, k0: int, k1: int) -> np.ndarray:
        """Transition matrix from the left edge of bin ``k0`` to that of ``k1`` (k0 <= k1)."""
        n = self.steps.shape[1]
        out = np.eye(n)
        for k in range(k0, k1):
            out = out @ self.steps[k]
        return out


def propagator(p: RateProtocol) -> Propagator:
    gens = p.generators()
    dt = p.dt
    steps = np.array([expm(dt * L) for L in gens])
    half = np.array([expm(0.5 * dt * L) for L in gens])
    mono = np.eye(p.graph.n_states)
    for s in steps:
        mono = mono @ s
    return Propagator(steps, half, mono)


def stationary_vector(P: np.ndarray, generator: bool = False) -> np.ndarray:
    """Left null/fixed vector normalized to a probability vector.

    One equation of ``pi (P - I) = 0`` (or ``pi L = 0``) is replaced by the
    normalization row and the system is solved directly.
    """
    n = P.shape[0]
    A = (P if generator else P - np.eye(n)).T.copy()
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise SteadyStateError(f"stationary system is numerically singular (cond={cond:.2e})")
    pi = np.linalg.solve(A, b)
    if np.any(pi <= 0):
        raise SteadyStateError(f"stationary vector not strictly positive: {pi}")
    return pi / pi.sum()


@dataclass(frozen=True)
class SteadyState:
    """``pi_t`` at bin midpoints, ``Q^pi_t(y, z) = pi_t(y) r(y, z; t)`` and ``pi_0``."""

    pi: PeriodicDensity
    q_pi: PeriodicFlow
    pi0: np.ndarray


def oscillatory_state(p: RateProtocol, prop: Propagator | None = None) -> SteadyState:
    prop = prop or propagator(p)
    pi0 = stationary_vector(prop.monodromy)
    g = p.graph
    vals = np.empty((g.n_states, p.bins))
    row = pi0.copy()
    for k in range(p.bins):
        vals[:, k] = row @ prop.half_steps[k]
        row = row @ prop.steps[k]
    vals /= vals.sum(axis=0, keepdims=True)
    if np.any(vals <= 0):
        raise SteadyStateError("oscillatory state has a non-positive entry")
    pi = PeriodicDensity(g, p.period, vals)
    return SteadyState(pi, q_of_density(pi, p), pi0)


def q_of_density(mu: PeriodicDensity, p: RateProtocol) -> PeriodicFlow:
    """``Q^mu(y, z; t) = mu_t(y) r(y, z; t)``."""
    ys = np.array([y for y, _ in p.graph.edges], dtype=int)
    return PeriodicFlow(p.graph, p.period, mu.values[ys] * p.rates)


def two_state_pi(p: RateProtocol) -> PeriodicDensity:
    """Closed-form oscillatory state of a two-state chain at bin midpoints.

    ``Gamma_t`` is piecewise linear and every integral of
    ``r_s e^{Gamma_s}`` is summed exactly bin by bin; exponents are kept
    non-positive by factoring out ``e^{Gamma_t}``.
    """
    g = p.graph
    if g.n_states != 2:
        raise ValueError("two_state_pi needs exactly two states")
    e01, e10 = g.edge_index(0, 1), g.edge_index(1, 0)
    if e01 is None or e10 is None:
        raise ValueError("two_state_pi needs both edges 0->1 and 1->0")
    a, b = p.rates[e01], p.rates[e10]
    c = a + b
    dt = p.dt
    m = p.bins
    G = np.concatenate([[0.0], np.cumsum(c * dt)])   # Gamma at bin edges
    GT = G[-1]
    # per-bin integrals of r10 e^{Gamma_s} and r01 e^{Gamma_s}, scaled by e^{-G[k+1]}
    shrink = -np.expm1(-c * dt) / c                     # int_0^dt e^{c(u-dt)} du
    out = np.empty((2, m))
    for k in range(m):
        tm = G[k] + 0.5 * c[k] * dt                     # Gamma at the midpoint
        vals = []
        for rate in (b, a):
            # int_0^t r e^{Gamma_s - Gamma_t} ds over full bins j < k plus half of bin k
            head = np.sum(rate[:k] * shrink[:k] * np.exp(G[1:k + 1] - tm))
            h = 0.5 * dt
            head += rate[k] * (-np.expm1(-c[k] * h) / c[k])
            # e^{-GT} int_t^T r e^{Gamma_s - Gamma_t} ds: remaining half of bin k plus bins j > k
            tail = rate[k] * (-np.expm1(-c[k] * h) / c[k]) * np.exp(G[k + 1] - tm - GT)
            tail += np.sum(rate[k + 1:] * shrink[k + 1:] * np.exp(G[k + 2:] - tm - GT))
            vals.append((head + tail) / (-np.expm1(-GT)))
        out[:, k] = vals
    return PeriodicDensity(g, p.period, out)


def accompanying_distribution(p: RateProtocol) -> PeriodicDensity:
    """Invariant law of the frozen generator on every bin."""
    gens = p.generators()
    vals = np.column_stack([stationary_vector(L, generator=True) for L in gens])
    return PeriodicDensity(p.graph, p.period, vals)


def bin_averaged_state(p: RateProtocol, prop: Propagator | None = None) -> PeriodicDensity:
    """Exact time average of ``pi_t`` over each bin.

    Uses ``int_0^dt expm(s L) ds``, read off the upper-right block of
    ``expm(dt [[L, I], [0, 0]])``.
    """
    prop = prop or propagator(p)
    pi0 = stationary_vector(prop.monodromy)
    n = p.graph.n_states
    vals = np.empty((n, p.bins))
    row = pi0.copy()
    for k, L in enumerate(p.generators()):
        big = np.zeros((2 * n, 2 * n))
        big[:n, :n] = L
        big[:n, n:] = np.eye(n)
        integral = expm(p.dt * big)[:n, n:]
        vals[:, k] = row @ integral / p.dt
        row = row @ prop.steps[k]
    return PeriodicDensity(p.graph, p.period, vals)
