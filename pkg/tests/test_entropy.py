import numpy as np
import pytest

from conftest import sinusoidal_three_state
from periodic_ldp.entropy import (MembershipError, gc_check, s_ex, s_naive, s_tot,
                                  s_tot_current)
from periodic_ldp.grid import PeriodicDensity, PeriodicFlow, flow_to_current
from periodic_ldp.ldp import theta_reverse
from periodic_ldp.model import (RateProtocol, build_example, constant_protocol,
                                dual_reversed_protocol, load_protocol, reversed_protocol,
                                two_state_graph)
from periodic_ldp.sampling import random_lambda
from periodic_ldp.simulate import accumulate, path_entropy_flows, sample_path
from periodic_ldp.steady import accompanying_distribution, oscillatory_state


def test_time_symmetric_protocol_naive_equals_total(tri, rng):
    sym = RateProtocol(tri.graph, 1.0, 0.5 * (tri.rates + tri.rates[:, ::-1]))
    mu, q = random_lambda(sym, rng)
    assert s_naive(mu, q, sym) == pytest.approx(s_tot(q, sym), abs=1e-14)


def test_symmetric_constant_rates_give_zero(rng):
    p = constant_protocol(two_state_graph(), [1.3, 1.3], bins=32)
    mu, q = random_lambda(p, rng)
    assert s_naive(mu, q, p) == 0.0 and s_tot(q, p) == 0.0 and s_ex(mu, p) == 0.0


def test_symmetric_rates_have_no_total_flow(rng):
    p = build_example("stochastic_resonance", {"k": 1.0, "symmetric": True}, bins=64)
    mu, q = random_lambda(p, rng)
    assert s_tot(q, p) == 0.0


def test_total_flow_current_form(tri, rng):
    mu, q = random_lambda(tri, rng)
    assert s_tot_current(flow_to_current(q), tri) == pytest.approx(s_tot(q, tri), abs=1e-13)


def test_steady_total_flow_nonnegative():
    p = load_protocol("configs/quantum_dot.json")
    ss = oscillatory_state(p)
    assert s_tot(ss.q_pi, p) > 0
    for name in ("defect_center", "stochastic_resonance", "piecewise", "three_state_table",
                 "stochastic_resonance_symmetric"):
        p = load_protocol(f"configs/{name}.json")
        assert s_tot(oscillatory_state(p).q_pi, p) >= -1e-12


def test_excess_flow_constant_protocol(tri, rng):
    p = constant_protocol(tri.graph, tri.rates[:, 0], bins=16)
    mu, _ = random_lambda(p, rng)
    assert s_ex(mu, p) == 0.0


def test_excess_flow_at_accompanying_law_is_first_order():
    # sum_y w_k log(w_k/w_{k-1}) is a relative entropy, so only O(1/M)
    vals = []
    for m in (128, 256, 512):
        p = sinusoidal_three_state(m)
        w = accompanying_distribution(p)
        vals.append(s_ex(w, p, w))
    assert all(v < 0 for v in vals)
    np.testing.assert_allclose(vals[0] / vals[1], 2.0, rtol=0.02)
    np.testing.assert_allclose(vals[1] / vals[2], 2.0, rtol=0.02)


def test_excess_flow_at_steady_state_matches_paths():
    p = build_example("stochastic_resonance", {"k": 1.0}, bins=64)
    w = accompanying_distribution(p)
    pi = oscillatory_state(p).pi
    est = np.array([path_entropy_flows(sample_path(p, 0, 500, seed=21, replica=r), p, w).ex
                    for r in range(16)])
    err = 3 * est.std(ddof=1) / np.sqrt(len(est))
    # path form pairs w with left-edge occupations; allow the O(1/M) bin bias
    assert abs(est.mean() - s_ex(pi, p, w)) <= err + 0.05


def test_theta_antisymmetry(tri, rng):
    mu, q = random_lambda(tri, rng)
    tm, tq = theta_reverse(mu, q)
    assert abs(s_naive(tm, tq, tri) + s_naive(mu, q, tri)) <= 1e-10
    assert abs(s_tot(tq, reversed_protocol(tri)) + s_tot(q, tri)) <= 1e-10
    w = accompanying_distribution(tri)
    dr = dual_reversed_protocol(tri, w)
    logw = np.log(w.values)
    # reflection turns the backward difference into the forward one
    forward = np.sum(mu.values * (np.roll(logw, -1, axis=1) - logw))
    assert abs(s_ex(tm, dr) - forward) <= 1e-10
    gaps = []
    for m in (128, 256, 512):
        p = sinusoidal_three_state(m)
        mu, _ = random_lambda(p, np.random.default_rng(np.random.Philox(8)))
        tm, _ = theta_reverse(mu, PeriodicFlow(p.graph, 1.0, np.ones((6, m))))
        gaps.append(abs(s_ex(tm, dual_reversed_protocol(p, accompanying_distribution(p)))
                        + s_ex(mu, p)))
    assert gaps[0] > 1.8 * gaps[1] > 3.2 * gaps[2]


def test_gc_symmetric_constant_rates_exact():
    p = constant_protocol(two_state_graph(), [0.9, 0.9], bins=16)
    mu = PeriodicDensity(p.graph, 1.0, np.full((2, 16), 0.5))
    q = PeriodicFlow(p.graph, 1.0, np.full((2, 16), 0.7))
    assert gc_check("uva2", mu, q, p).residual == 0.0


@pytest.mark.parametrize("relation", ["uva1", "uva2", "uva3"])
def test_gc_flow_relations(relation):
    p = sinusoidal_three_state(256)
    rng = np.random.default_rng(np.random.Philox(17))
    for _ in range(3):
        mu, q = random_lambda(p, rng, modulation=0.01)
        rep = gc_check(relation, mu, q, p)
        assert rep.residual <= 1e-6
        assert set(rep.row()) >= {"relation", "lhs", "rhs", "residual"}


def test_gc_steady_state_current():
    res = []
    for m in (256, 512, 1024):
        p = sinusoidal_three_state(m)
        ss = oscillatory_state(p)
        j = flow_to_current(ss.q_pi)
        rep = gc_check("luci1", ss.pi, j, p)
        assert rep.rhs == pytest.approx(s_tot(ss.q_pi, p), abs=1e-8)
        res.append(rep.residual)
    assert res[0] > 3 * res[1] > 9 * res[2]
    assert res[2] <= 1e-6


def test_gc_rejects_bad_input(tri, rng):
    mu, q = random_lambda(tri, rng)
    vals = mu.values.copy()
    vals[:, 0] *= 0.5
    with pytest.raises(MembershipError):
        gc_check("uva1", PeriodicDensity(tri.graph, 1.0, vals), q, tri)
    with pytest.raises(TypeError):
        gc_check("luci1", mu, q, tri)
    with pytest.raises(ValueError):
        gc_check("uva9", mu, q, tri)


def test_flow_functionals_on_paths_are_consistent(tri):
    path = sample_path(tri, 0, 200, seed=6)
    tr = accumulate(path, tri)
    f = path_entropy_flows(path, tri, accompanying_distribution(tri))
    assert abs(f.tot - s_tot(tr.q, tri)) <= 1e-12
    assert abs(f.naive - s_naive(tr.mu, tr.q, tri)) <= 1e-10
