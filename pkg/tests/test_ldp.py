import math

import numpy as np
import pytest

from periodic_ldp.grid import (PeriodicCurrent, PeriodicDensity, PeriodicFlow, flow_to_current,
                               forward_difference, lambda_membership)
from periodic_ldp.ldp import TestFunctionPair as Tf
from periodic_ldp.ldp import (analytic_test_function, minimal_flow_oracle,
                              phi_array, phi_fn, psi_fn, q_from_current, random_test_function,
                              rate_I, rate_I_hat, tilted_rate, theta_reverse,
                              theta_reverse_current, variational_lower_bound)
from periodic_ldp.model import (Graph, RateProtocol, build_example, constant_protocol,
                                two_state_graph)
from periodic_ldp.sampling import random_lambda, random_lambda_a
from periodic_ldp.steady import oscillatory_state


def test_phi_values():
    assert phi_fn(1.7, 1.7).value == 0.0
    assert phi_fn(0.0, 3.5).value == 3.5
    assert phi_fn(2.0, 1.0).value == pytest.approx(2 * math.log(2) - 1, abs=1e-15)
    inf = phi_fn(0.5, 0.0)
    assert not inf.finite and inf.reason
    assert phi_fn(0.0, 0.0).value == 0.0
    with pytest.raises(ValueError):
        phi_fn(-1.0, 1.0)


def test_psi_values():
    assert psi_fn(0.3, 0.3, 1.2).value == 0.0
    assert psi_fn(-2.0, -2.0, 0.5).value == 0.0
    assert psi_fn(0.0, 0.0, 2.0).value == 0.0
    assert psi_fn(-1.5, 0.4, 0.0).value == phi_fn(1.5, 0.4).value
    assert not psi_fn(1.0, 0.0, 0.0).finite


def test_phi_convex(rng):
    q1, q2, p = rng.uniform(0, 5, (3, 1000))
    lam = rng.uniform(size=1000)
    lhs = phi_array(lam * q1 + (1 - lam) * q2, p)
    rhs = lam * phi_array(q1, p) + (1 - lam) * phi_array(q2, p)
    assert np.all(lhs <= rhs + 1e-12)


def test_phi_legendre(rng):
    q, p = rng.uniform(1e-3, 10, (2, 200))
    s = np.linspace(-12, 12, 200_001)
    best = np.array([np.max(qi * s - pi * np.expm1(s)) for qi, pi in zip(q, p)])
    assert np.max(np.abs(best - phi_array(q, p))) <= 1e-6


def test_rate_zero_at_steady_state(tri):
    ss = oscillatory_state(tri)
    assert rate_I(ss.pi, ss.q_pi, tri).value <= 1e-12
    assert rate_I_hat(ss.pi, flow_to_current(ss.q_pi), tri).value.value <= 1e-8


def test_rate_infinite_off_lambda(tri):
    ss = oscillatory_state(tri)
    vals = ss.pi.values.copy()
    vals[:, 3] *= 0.9
    bad = PeriodicDensity(tri.graph, 1.0, vals)
    v = rate_I(bad, ss.q_pi, tri)
    assert not v.finite and "(i)" in v.reason


def test_frozen_two_state_rate():
    p = build_example("defect_center", {"a0": 1.0, "gamma": 0.5, "b0": 2.0}, bins=128)
    g = p.graph
    mu = PeriodicDensity(g, 1.0, np.full((2, 128), 0.5))
    s = np.sqrt(0.25 * p.rates[0] * p.rates[1])
    q = PeriodicFlow(g, 1.0, np.vstack([s, s]))
    want = np.mean((np.sqrt(0.5 * p.rates[0]) - np.sqrt(0.5 * p.rates[1])) ** 2)
    assert rate_I(mu, q, p).value == pytest.approx(want, abs=1e-12)


def test_minimal_flow_examples():
    p = constant_protocol(two_state_graph(), [2.0, 2.0], bins=4)
    mu = PeriodicDensity(p.graph, 1.0, np.full((2, 4), 0.5))
    q = q_from_current(mu, PeriodicCurrent(p.graph, 1.0, np.zeros((1, 4))), p)
    np.testing.assert_allclose(q.values, 1.0, rtol=1e-15)

    cyc = Graph((0, 1, 2), ((0, 1), (1, 2), (2, 0)))
    pc = RateProtocol(cyc, 1.0, np.ones((3, 2)))
    mu = PeriodicDensity(cyc, 1.0, np.full((3, 2), 1 / 3))
    # pairs (0,1), (0,2), (1,2); J(0,1) = 0.7 along 0->1, -0.7 against 2->0
    j = PeriodicCurrent(cyc, 1.0, np.array([[0.7, -0.7], [0.0, 0.0], [0.0, 0.0]]))
    q = q_from_current(mu, j, pc).values
    assert list(q[cyc.edge_index(0, 1)]) == [0.7, 0.0]


def test_minimal_flow_matches_two_state_formula():
    m = 256
    p = build_example("defect_center", {"a0": 1.0, "gamma": 0.5, "b0": 2.0}, bins=m)
    t = p.midpoints()
    m0 = 0.4 + 0.2 * np.sin(2 * np.pi * t)
    mu = PeriodicDensity(p.graph, 1.0, np.vstack([m0, 1 - m0]))
    dm = forward_difference(mu.values, 1.0)[0]
    j = PeriodicCurrent(p.graph, 1.0, [-dm])
    want = 0.5 * (-dm + np.sqrt(dm ** 2 + 4 * m0 * (1 - m0) * p.rates[0] * p.rates[1]))
    np.testing.assert_allclose(q_from_current(mu, j, p).values[0], want, rtol=1e-12)


def test_phi_and_psi_forms_agree(tri, rng):
    for _ in range(10):
        mu, j = random_lambda_a(tri, rng, circulation=0.5)
        h = rate_I_hat(mu, j, tri)
        assert h.value.finite and h.difference <= 1e-10


def test_hat_infinite_on_sign_violation():
    cyc = Graph((0, 1, 2), ((0, 1), (1, 2), (2, 0)))
    p = RateProtocol(cyc, 1.0, np.ones((3, 4)))
    mu = PeriodicDensity(cyc, 1.0, np.full((3, 4), 1 / 3))
    j = PeriodicCurrent(cyc, 1.0, np.array([[-0.2] * 4, [0.2] * 4, [-0.2] * 4]))
    assert not rate_I_hat(mu, j, p).value.finite


def test_oracle_matches_closed_form(tri, rng):
    mu, j = random_lambda_a(tri, rng, circulation=0.5)
    diff = minimal_flow_oracle(mu, j, tri).values - q_from_current(mu, j, tri).values
    assert np.max(np.abs(diff)) <= 1e-8


def test_oracle_edge_cases(tri):
    g = tri.graph
    mu_v = np.full((3, tri.bins), 0.5)
    mu_v[2] = 0.0
    mu = PeriodicDensity(g, 1.0, mu_v)
    jv = np.zeros((3, tri.bins))
    jv[1] = -0.1             # pair (0,2): flow 2->0 from an empty state
    j = PeriodicCurrent(g, 1.0, jv)
    q = minimal_flow_oracle(mu, j, tri)
    assert np.all(q.values[g.edge_index(2, 0)] == 0.1)
    assert np.all(q.values[g.edge_index(0, 2)] == 0.0)
    # symmetric part on pair (0,1) with J = 0 is sqrt(mu mu r r)
    s = np.sqrt(0.25 * tri.rates[g.edge_index(0, 1)] * tri.rates[g.edge_index(1, 0)])
    np.testing.assert_allclose(q.values[g.edge_index(0, 1)], s, rtol=1e-14)
    np.testing.assert_allclose(q.values[g.edge_index(1, 0)], s, rtol=1e-14)


def test_hat_below_rate_for_any_flow_with_same_current(tri, rng):
    mu, q = random_lambda(tri, rng)
    j = flow_to_current(q)
    base = rate_I_hat(mu, j, tri).value.value
    rev = tri.graph.reverse_index()
    for _ in range(20):
        s = rng.uniform(0, 0.5, size=q.values.shape)
        s = 0.5 * (s + s[rev])   # same symmetric bump on both directions
        q2 = PeriodicFlow(tri.graph, 1.0, q.values + s)
        assert base <= rate_I(mu, q2, tri).value + 1e-12


def test_rate_convex_and_mixing(tri, rng):
    m1, q1 = random_lambda(tri, rng)
    m2, q2 = random_lambda(tri, rng)
    i1, i2 = rate_I(m1, q1, tri).value, rate_I(m2, q2, tri).value
    for lam in (0.1, 0.5, 0.9):
        mu = PeriodicDensity(tri.graph, 1.0, lam * m1.values + (1 - lam) * m2.values)
        q = PeriodicFlow(tri.graph, 1.0, lam * q1.values + (1 - lam) * q2.values)
        assert rate_I(mu, q, tri).value <= lam * i1 + (1 - lam) * i2 + 1e-12
    ss = oscillatory_state(tri)
    for n in (2, 10, 100):
        a = 1 - 1 / n
        mu = PeriodicDensity(tri.graph, 1.0, a * m1.values + ss.pi.values / n)
        q = PeriodicFlow(tri.graph, 1.0, a * q1.values + ss.q_pi.values / n)
        assert rate_I(mu, q, tri).value <= a * i1 + 1e-12


def test_tilted_rate_with_zero_F_vanishes(tri, rng):
    mu, q = random_lambda(tri, rng)
    tf = random_test_function(tri, rng)
    val = tilted_rate(mu, q, Tf(tf.phi, np.zeros_like(tf.F)), tri)
    assert abs(val) <= 1.0 / tri.bins


def test_variational_bound(tri, rng):
    mu, q = random_lambda(tri, rng)
    rate = rate_I(mu, q, tri).value
    vb = variational_lower_bound(mu, q, tri, trials=64, seed=1)
    assert abs(vb.analytic - rate) <= 1e-6
    assert np.all(vb.trials <= rate + 1e-8)
    tf = analytic_test_function(mu, q, tri)
    assert np.max(np.abs(tf.F)) < 40


def test_theta_involution_and_membership(tri, rng):
    mu, q = random_lambda(tri, rng)
    tm, tq = theta_reverse(*theta_reverse(mu, q))
    assert np.array_equal(tm.values, mu.values) and np.array_equal(tq.values, q.values)
    assert lambda_membership(*theta_reverse(mu, q)).ok
    j = flow_to_current(q)
    tm, tj = theta_reverse_current(*theta_reverse_current(mu, j))
    assert np.array_equal(tj.values, j.values)


def test_theta_fixed_point():
    g = two_state_graph()
    mu = PeriodicDensity(g, 1.0, np.full((2, 6), 0.5))
    q = PeriodicFlow(g, 1.0, np.full((2, 6), 0.3))
    tm, tq = theta_reverse(mu, q)
    assert np.array_equal(tm.values, mu.values) and np.array_equal(tq.values, q.values)
