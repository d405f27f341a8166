"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances."""
import math
import time

import numpy as np
import pytest

from conftest import record, sinusoidal_three_state
from periodic_ldp.contract import (ContractionProblem, basket_check, contract,
                                   flow_rate_closed_form, inf_homogenized, scgf, scgf_legendre)
from periodic_ldp.entropy import gc_check, s_tot
from periodic_ldp.grid import flow_to_current
from periodic_ldp.ldp import (minimal_flow_oracle, q_from_current, rate_I, rate_I_hat,
                              theta_reverse, theta_reverse_current, variational_lower_bound)
from periodic_ldp.model import build_example, reversed_protocol
from periodic_ldp.sampling import draw, random_lambda, random_lambda_a, realize
from periodic_ldp.simulate import accumulate, conservation_residuals, path_entropy_flows, \
    sample_path
from periodic_ldp.steady import (accompanying_distribution, bin_averaged_state,
                                 oscillatory_state, two_state_pi)

EXAMPLES = [
    ("quantum_dot", {"gamma": 1.0, "x_amp": 1.0}),
    ("defect_center", {"a0": 1.0, "gamma": 0.5, "b0": 2.0}),
    ("stochastic_resonance", {"k": 1.0}),
    ("piecewise", {"h0": 0.0, "a": 1.0, "alpha": 0.5}),
]
FLOW_TARGETS = (0.25, 0.5, 1.0, 2.0)


def verdict(n: int, ok: bool, detail: str) -> None:
    record(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
    assert ok, detail


def philox(seed):
    return np.random.default_rng(np.random.Philox(seed))


@pytest.fixture(scope="module")
def sym_sr():
    return build_example("stochastic_resonance", {"k": 1.0, "symmetric": True}, bins=64)


def test_criterion_1_two_state_oracle():
    worst, slowest = 0.0, 0.0
    for name, params in EXAMPLES:
        p = build_example(name, params, bins=512)
        t0 = time.perf_counter()
        diff = np.max(np.abs(oscillatory_state(p).pi.values - two_state_pi(p).values))
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, diff)
    ok = worst <= 1e-8 and slowest < 1.0
    verdict(1, ok, f"max |propagated - closed form| = {worst:.2e} (tol 1e-8), "
                   f"slowest {slowest:.2f}s (limit 1s)")


def test_criterion_2_zero_of_rate():
    p = sinusoidal_three_state(256)
    ss = oscillatory_state(p)
    i = rate_I(ss.pi, ss.q_pi, p).value
    ih = rate_I_hat(ss.pi, flow_to_current(ss.q_pi), p).value.value
    verdict(2, i <= 1e-6 and ih <= 1e-6, f"I(pi,Q^pi) = {i:.2e}, I_hat(pi,J^pi) = {ih:.2e} "
                                          f"(tol 1e-6)")


def test_criterion_3_phi_psi_forms():
    p = sinusoidal_three_state(256)
    rng = philox(3)
    worst_form, worst_oracle = 0.0, 0.0
    for _ in range(100):
        mu, j = random_lambda_a(p, rng, circulation=0.5)
        h = rate_I_hat(mu, j, p)
        worst_form = max(worst_form, h.difference if h.value.finite else math.inf)
        diff = minimal_flow_oracle(mu, j, p).values - q_from_current(mu, j, p).values
        worst_oracle = max(worst_oracle, float(np.max(np.abs(diff))))
    ok = worst_form <= 1e-10 and worst_oracle <= 1e-8
    verdict(3, ok, f"max |Phi form - Psi form| = {worst_form:.2e} (tol 1e-10), "
                   f"max |oracle - closed form| = {worst_oracle:.2e} (tol 1e-8)")


def test_criterion_4_gallavotti_cohen():
    t0 = time.perf_counter()
    coarse, fine = sinusoidal_three_state(256), sinusoidal_three_state(512)
    wc, wf = accompanying_distribution(coarse), accompanying_distribution(fine)
    rng = philox(4)
    worst, min_ratio = 0.0, math.inf
    per_rel = {}
    for _ in range(20):
        d = draw(coarse.graph, rng, modulation=0.01)
        mc, qc = realize(d, coarse)
        mf, qf = realize(d, fine)
        for rel in ("uva1", "uva2", "uva3", "luci1", "luci2"):
            xc = qc if rel.startswith("uva") else flow_to_current(qc)
            xf = qf if rel.startswith("uva") else flow_to_current(qf)
            rc = gc_check(rel, mc, xc, coarse, wc).residual
            rf = gc_check(rel, mf, xf, fine, wf).residual
            worst = max(worst, rc)
            per_rel[rel] = max(per_rel.get(rel, 0.0), rc)
            min_ratio = min(min_ratio, rc / rf if rf > 0 else math.inf)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and min_ratio >= 1.8 and elapsed < 30
    detail = ", ".join(f"{k} {v:.2e}" for k, v in per_rel.items())
    verdict(4, ok, f"max residual at M=256: {detail} (tol 1e-6); min M-doubling ratio "
                   f"{min_ratio:.3f} (need 1.8); {elapsed:.1f}s (limit 30s)")


def test_criterion_5_variational():
    p = sinusoidal_three_state(256)
    rng = philox(5)
    worst_gap, worst_excess = 0.0, -math.inf
    for i in range(50):
        mu, q = random_lambda(p, rng)
        rate = rate_I(mu, q, p).value
        vb = variational_lower_bound(mu, q, p, trials=32, seed=100 + i)
        worst_gap = max(worst_gap, abs(vb.analytic - rate))
        worst_excess = max(worst_excess, float(vb.trials.max()) - rate)
    ok = worst_gap <= 1e-6 and worst_excess <= 1e-8
    verdict(5, ok, f"max |analytic F - I| = {worst_gap:.2e} (tol 1e-6), "
                   f"max random trial - I = {worst_excess:.2e} (must be <= 1e-8)")


def test_criterion_6_contraction(sym_sr):
    t0 = time.perf_counter()
    r_bar = float(sym_sr.rates[0].mean())
    worst_rel, worst_inf = 0.0, 0.0
    for f in FLOW_TARGETS:
        qb = f * r_bar
        res = contract(ContractionProblem(sym_sr, None, np.array([qb, qb])))
        exact = flow_rate_closed_form(qb, r_bar)
        rel = abs(res.value.value / sym_sr.period - exact) / (1 + res.value.value)
        worst_rel = max(worst_rel, rel if res.converged else math.inf)
        worst_inf = max(worst_inf, abs(inf_homogenized(qb, r_bar) - exact))
    basket = basket_check(sym_sr, samples=50, seed=6)
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-4 and basket.ok and worst_inf <= 1e-6 and elapsed < 60
    verdict(6, ok, f"max relative error vs closed form {worst_rel:.2e} (tol 1e-4); basket "
                   f"worst I_bar - I_hom = {basket.worst:.2e} over 50 targets (must be <= 1e-8),"
                   f" {basket.strict} strict; inf_mu I_hom vs closed form {worst_inf:.2e} "
                   f"(tol 1e-6); {elapsed:.1f}s (limit 60s)")


def test_criterion_7_scgf(sym_sr):
    T = sym_sr.period
    r_bar = float(sym_sr.rates[0].mean())
    worst_scgf = max(abs(scgf(sym_sr, s) - r_bar * T * math.expm1(s))
                     for s in (-1.0, -0.5, 0.5, 1.0))
    worst_leg = 0.0
    for f in FLOW_TARGETS:
        qb = f * r_bar
        val, _ = scgf_legendre(sym_sr, 2 * T * qb)
        worst_leg = max(worst_leg, abs(val - T * flow_rate_closed_form(qb, r_bar)))
    ok = worst_scgf <= 1e-8 and worst_leg <= 1e-4
    verdict(7, ok, f"max |scgf - r_bar T (e^s - 1)| = {worst_scgf:.2e} (tol 1e-8), "
                   f"max |Legendre - T I_f| = {worst_leg:.2e} (tol 1e-4)")


@pytest.fixture(scope="module")
def lln_run():
    p = build_example("stochastic_resonance", {"k": 1.0}, bins=64)
    w = accompanying_distribution(p)
    t0 = time.perf_counter()
    out = []
    for r in range(64):
        path = sample_path(p, 0, 2000, seed=8, replica=r)
        tr = accumulate(path, p)
        out.append((path, tr, path_entropy_flows(path, p, w)))
    return p, out, time.perf_counter() - t0


def test_criterion_8_law_of_large_numbers(lln_run):
    p, runs, elapsed = lln_run
    ss = oscillatory_state(p)
    avg = bin_averaged_state(p).values
    mus = np.array([tr.mu.values for _, tr, _ in runs])
    qs = np.array([tr.q.values for _, tr, _ in runs])
    # bins hold bin averages of pi_t, the reference holds midpoint values
    ys = [y for y, _ in p.graph.edges]
    allow_mu = float(np.max(np.abs(avg - ss.pi.values)))
    allow_q = float(np.max(np.abs(p.rates * (avg[ys] - ss.pi.values[ys]))))
    d_mu = np.max(np.abs(mus - ss.pi.values), axis=(1, 2)).mean()
    d_q = np.max(np.abs(qs - ss.q_pi.values), axis=(1, 2)).mean()
    band_mu = 3 * float(mus.std(axis=0, ddof=1).max()) + allow_mu
    band_q = 3 * float(qs.std(axis=0, ddof=1).max()) + allow_q
    worst_tot = max(abs(f.tot - s_tot(tr.q, p)) for _, tr, f in runs)
    ok = d_mu <= band_mu and d_q <= band_q and worst_tot <= 1e-12 and elapsed < 120
    verdict(8, ok, f"mean ||mu - pi|| = {d_mu:.4f} vs band {band_mu:.4f}, mean ||Q - Q^pi|| = "
                   f"{d_q:.4f} vs band {band_q:.4f}; max |sigma_tot/n - s_tot| = "
                   f"{worst_tot:.2e} (tol 1e-12); simulation {elapsed:.1f}s (limit 120s)")


def test_criterion_9_exact_conservation(lln_run):
    p, runs, _ = lln_run
    worst = max(float(np.max(np.abs(conservation_residuals(tr)))) for _, tr, _ in runs)
    tri = sinusoidal_three_state(256)
    for r in range(8):
        tr = accumulate(sample_path(tri, r % 3, 200, seed=9, replica=r), tri)
        worst = max(worst, float(np.max(np.abs(conservation_residuals(tr)))))
    mu, q = random_lambda(tri, philox(9))
    j = flow_to_current(q)
    tm, tq = theta_reverse(*theta_reverse(mu, q))
    um, uj = theta_reverse_current(*theta_reverse_current(mu, j))
    theta_ok = (np.array_equal(tm.values, mu.values) and np.array_equal(tq.values, q.values)
                and np.array_equal(um.values, mu.values) and np.array_equal(uj.values, j.values))
    rev_ok = all(np.array_equal(reversed_protocol(reversed_protocol(x)).rates, x.rates)
                 for x in (tri, p))
    ok = worst <= 1e-12 and theta_ok and rev_ok
    verdict(9, ok, f"max conservation defect {worst:.2e} over {len(runs) + 8} paths "
                   f"(tol 1e-12); theta involution exact: {theta_ok}; protocol reversal "
                   f"involution exact: {rev_ok}")
