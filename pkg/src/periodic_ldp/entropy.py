"""Entropy-flow functionals and checks of the time-reversal duality relations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (DEFAULT_TOL, PeriodicCurrent, PeriodicDensity, PeriodicFlow, Tolerances,
                   lambda_a_membership, lambda_membership)
from .ldp import rate_I, rate_I_hat, theta_reverse, theta_reverse_current
from .model import ProtocolError, RateProtocol, dual_reversed_protocol, reversed_protocol
from .steady import accompanying_distribution

RELATIONS = ("uva1", "uva2", "uva3", "luci1", "luci2")


class MembershipError(ValueError):
    """Inputs are outside Lambda (or Lambda_a)."""


def _need_symmetric(p: RateProtocol) -> np.ndarray:
    if not p.graph.is_symmetric():
        raise ProtocolError("entropy flows need E == E_s")
    return p.graph.reverse_index()


def s_naive(mu: PeriodicDensity, q: PeriodicFlow, p: RateProtocol) -> float:
    """Naive entropy flow against the reflected protocol.

    Jump part ``Q log r(y,z;t)/r(z,y;T0-t)`` minus exit part
    ``mu(y) [r(y;t) - r(y;T0-t)]``.
    """
    rev = _need_symmetric(p)
    logr = np.log(p.rates)
    ex = p.exit_rates()
    jump = np.sum(q.values * (logr - logr[rev][:, ::-1]))
    leave = np.sum(mu.values * (ex - ex[:, ::-1]))
    return float(p.dt * (jump - leave))


def s_tot(q: PeriodicFlow, p: RateProtocol) -> float:
    """Total entropy flow ``int sum_E Q log(r(y,z)/r(z,y)) dt``."""
    rev = _need_symmetric(p)
    logr = np.log(p.rates)
    return float(p.dt * np.sum(q.values * (logr - logr[rev])))


def s_tot_current(j: PeriodicCurrent, p: RateProtocol) -> float:
    """Current form ``1/2 sum_E int J log(r(y,z)/r(z,y)) dt`` (one term per pair)."""
    _need_symmetric(p)
    g = p.graph
    logr = np.log(p.rates)
    tot = 0.0
    for i, (a, b) in enumerate(g.pairs):
        tot += np.sum(j.values[i] * (logr[g.edge_index(a, b)] - logr[g.edge_index(b, a)]))
    return float(p.dt * tot)


def s_ex(mu: PeriodicDensity, p: RateProtocol, w: PeriodicDensity | None = None) -> float:
    """Excess entropy flow ``-sum_y int mu_t(y) d_t log w_t(y) dt``.

    ``d_t log w`` is the backward difference of ``log w``, so across a rate
    discontinuity the jump of ``log w`` is weighted by the density on the
    bin after it.
    """
    if w is None:
        w = accompanying_distribution(p)
    logw = np.log(w.values)
    return float(-np.sum(mu.values * (logw - np.roll(logw, 1, axis=1))))


@dataclass(frozen=True)
class GCReport:
    relation: str
    lhs: float
    rhs: float
    residual: float
    inputs: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"relation": self.relation, "lhs": self.lhs, "rhs": self.rhs,
                "residual": self.residual, **self.inputs}


def gc_check(relation: str, mu: PeriodicDensity, x, p: RateProtocol,
             w: PeriodicDensity | None = None, tol: Tolerances = DEFAULT_TOL) -> GCReport:
    """Evaluate one duality relation by two independent routes.

    The left side is the rate functional of the reversed pair under the
    reversed (or dual-reversed) protocol, built from scratch; the right side
    is the forward functional plus the entropy flow.

    Parameters
    ----------
    relation : {"uva1", "uva2", "uva3", "luci1", "luci2"}
    x : PeriodicFlow for the ``uva`` relations, PeriodicCurrent for ``luci``.
    w : accompanying distribution; computed when needed and not given.

    Raises
    ------
    MembershipError
        If the inputs are outside Lambda / Lambda_a.
    """
    if relation not in RELATIONS:
        raise ValueError(f"unknown relation {relation!r}; choose from {RELATIONS}")
    _need_symmetric(p)
    if relation.startswith("uva"):
        if not isinstance(x, PeriodicFlow):
            raise TypeError(f"{relation} needs a PeriodicFlow")
        mem = lambda_membership(mu, x, tol)
    else:
        if not isinstance(x, PeriodicCurrent):
            raise TypeError(f"{relation} needs a PeriodicCurrent")
        mem = lambda_a_membership(mu, x, tol)
    if not mem.ok:
        raise MembershipError(mem.reason)

    if relation in ("uva3", "luci2") and w is None:
        w = accompanying_distribution(p)

    if relation == "uva1":
        tm, tq = theta_reverse(mu, x)
        lhs = rate_I(tm, tq, p, tol).value
        rhs = rate_I(mu, x, p, tol).value + s_naive(mu, x, p)
    elif relation == "uva2":
        tm, tq = theta_reverse(mu, x)
        lhs = rate_I(tm, tq, reversed_protocol(p), tol).value
        rhs = rate_I(mu, x, p, tol).value + s_tot(x, p)
    elif relation == "uva3":
        tm, tq = theta_reverse(mu, x)
        lhs = rate_I(tm, tq, dual_reversed_protocol(p, w), tol).value
        rhs = rate_I(mu, x, p, tol).value + s_ex(mu, p, w)
    elif relation == "luci1":
        tm, tj = theta_reverse_current(mu, x)
        lhs = rate_I_hat(tm, tj, reversed_protocol(p), tol).value.value
        rhs = rate_I_hat(mu, x, p, tol).value.value + s_tot_current(x, p)
    else:
        tm, tj = theta_reverse_current(mu, x)
        lhs = rate_I_hat(tm, tj, dual_reversed_protocol(p, w), tol).value.value
        rhs = rate_I_hat(mu, x, p, tol).value.value + s_ex(mu, p, w)
    return GCReport(relation, float(lhs), float(rhs), abs(float(lhs) - float(rhs)),
                    {"M": p.bins, "continuity": mem.continuity})
