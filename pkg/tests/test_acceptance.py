"""Acceptance criteria 1-10.  Each test prints one PASS/FAIL line (also
collected in the terminal summary) before asserting."""
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import binom, chi2

from dmsnet.analysis import chi_square_binned, fit_tail, total_variation
from dmsnet.model import ModelParams
from dmsnet.propagator import (
    first_passage_time_min,
    iter_aggregate,
    iter_per_node,
    propagate_aggregate,
    propagate_per_node,
    verify_passage_identity,
    convergence_diagnostic,
)
from dmsnet.simulator import GrowthConfig, degree_histogram, grow
from dmsnet.steady import (
    p_zero,
    stationarity_residual,
    steady_ba_distribution,
    steady_ba_special,
    steady_gamma,
    steady_gamma_distribution,
    steady_recurrence,
    tail_exponent,
)

from oracles import enumerate_network, network_average, node_marginal

GRID = [(m, A) for m in (1, 2, 5) for A in sorted({0.5, 1.0, float(m), 5.0})]


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.abs(b)))


def test_c1_closed_form_equivalence(acceptance_log):
    start = time.perf_counter()
    worst, worst_ba = 0.0, 0.0
    q = np.arange(10**4 + 1)
    for m, A in GRID:
        p = ModelParams(m, A)
        rec = steady_recurrence(p, 10**4).mass
        gam = steady_gamma(p, q)
        worst = max(worst, rel_err(rec, gam))
        if A == m:
            ba = steady_ba_special(m, q)
            worst_ba = max(worst_ba, rel_err(rec, ba), rel_err(gam, ba))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and worst_ba <= 1e-12 and elapsed < 1.0
    acceptance_log(1, "closed-form equivalence", ok,
                   f"max rel {worst:.2e}, A=m vs special {worst_ba:.2e}, {elapsed:.2f}s")
    assert ok


def test_c2_stationarity(acceptance_log):
    start = time.perf_counter()
    worst = 0.0
    for m, A in GRID:
        p = ModelParams(m, A)
        for dist in (steady_gamma_distribution(p, 10**3), steady_recurrence(p, 10**3)):
            r = max(abs(stationarity_residual(dist, p, q)) for q in range(10**3 + 1))
            worst = max(worst, r / (1 + p.a))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 1.0
    acceptance_log(2, "stationarity residual", ok,
                   f"max residual/(1+a) {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_c3_exactness_oracle(acceptance_log):
    start = time.perf_counter()
    worst = 0.0
    for A in (Fraction(1, 2), Fraction(1), Fraction(3)):
        p = ModelParams(1, float(A))
        layers = enumerate_network(1, A, 6)
        for T in range(1, 7):
            agg = propagate_aggregate(p, T, eps=0.0)[-1].probs
            exact = network_average(layers[T], T)
            for q in range(max(len(agg), max(exact) + 1)):
                got = agg[q] if q < len(agg) else 0.0
                worst = max(worst, abs(got - float(exact.get(q, 0))))
            for i in range(1, T + 1):
                node = propagate_per_node(p, i, T)
                for q, pr in node_marginal(layers[T], i).items():
                    worst = max(worst, abs(node[q] - float(pr)))
                worst = max(worst, abs(math.fsum(node.probs) - 1.0))
    t3 = propagate_aggregate(ModelParams(1, 1.0), 3, eps=0.0)[-1].probs
    exact_t3 = network_average(enumerate_network(1, 1, 3)[3], 3)
    matches = exact_t3 == {0: Fraction(7, 12), 1: Fraction(1, 12), 2: Fraction(1, 12), 3: Fraction(1, 4)}
    t3_err = float(np.max(np.abs(t3 - np.array([7 / 12, 1 / 12, 1 / 12, 1 / 4]))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-14 and matches and t3_err <= 1e-15 and elapsed < 10
    acceptance_log(3, "exact enumeration oracle", ok,
                   f"max abs {worst:.1e}, t=3 exact={matches} err {t3_err:.1e}, {elapsed:.2f}s")
    assert ok


def test_c4_first_passage_identity(acceptance_log):
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for m in (1, 2):
        for A in (1.0, 2.0):
            p = ModelParams(m, A)
            for i in range(1, 6):
                for q in range(1, 9):
                    for t in range(max(i, first_passage_time_min(p, i, q)), 13):
                        worst = max(worst, verify_passage_identity(p, i, q, t))
                        checked += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 30
    acceptance_log(4, "first-passage identity", ok,
                   f"{checked} cases, max residual {worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_c5_convergence(acceptance_log):
    start = time.perf_counter()
    p = ModelParams(1, 1.0)
    cps = [10**2, 10**3, 10**4]
    closed = steady_gamma_distribution(p, 10**6)
    tv = [total_variation(st.distribution(p), closed) for st in iter_aggregate(p, cps[-1], checkpoints=cps)]
    series = convergence_diagnostic(p, 0, cps)
    scaled = [abs(x) for x in series.t_delta_p]
    elapsed = time.perf_counter() - start
    ok = (tv[0] > tv[1] > tv[2] and tv[2] <= 0.05
          and scaled[0] > scaled[1] > scaled[2] and elapsed < 120)
    acceptance_log(5, "convergence to the steady state", ok,
                   "TV " + ", ".join(f"{x:.2e}" for x in tv)
                   + "; t|dP(0)| " + ", ".join(f"{x:.2e}" for x in scaled) + f"; {elapsed:.1f}s")
    assert ok


def test_c6_simulation_agreement(acceptance_log):
    details, ok = [], True
    for m, A, seed in ((1, 1.0, 42), (2, 2.0, 43)):
        start = time.perf_counter()
        p = ModelParams(m, A)
        net = grow(GrowthConfig(p, 10**6, seed=seed))
        hist = degree_histogram(net).restrict(0, 200)
        tv = total_variation(hist, steady_gamma_distribution(p, 200))
        elapsed = time.perf_counter() - start
        ok &= tv <= 0.01 and elapsed < 60
        details.append(f"(m={m},A={A:g}) TV {tv:.2e} in {elapsed:.1f}s")
    acceptance_log(6, "simulation vs closed form", ok, "; ".join(details))
    assert ok


def test_c7_tail_exponent(acceptance_log):
    start = time.perf_counter()
    details, ok = [], True
    for m, A in ((1, 1.0), (2, 1.0), (1, 4.0)):
        p = ModelParams(m, A)
        fit = fit_tail(steady_gamma_distribution(p, 10**5), 10**3, 10**5)
        ok &= abs(fit.slope + tail_exponent(p)) <= 0.05
        details.append(f"(m={m},A={A:g}) {fit.slope:.4f} vs {-tail_exponent(p):.2f}")
    ba = fit_tail(steady_ba_distribution(2, 10**5), 10**3, 10**5)
    ok &= abs(ba.slope + 3.0) <= 0.05
    details.append(f"A=m=2 {ba.slope:.4f} vs -3")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 5
    acceptance_log(7, "tail exponent", ok, "; ".join(details) + f"; {elapsed:.2f}s")
    assert ok


def test_c8_binomial_snapshot_semantics(acceptance_log):
    start = time.perf_counter()
    p = ModelParams(2, 1.0)
    T = 10**5 + 1
    details, ok = [], True
    for node in (0, 9):
        net = grow(GrowthConfig(p, T + node, seed=808 + node), track=node)
        tr = net.tracked
        pi = tr["weight"] / ((p.m + p.A) * tr["t"])
        ks = np.arange(p.m + 1)
        expected = binom.pmf(ks[:, None], p.m, pi[None, :]).sum(axis=1)
        observed = np.bincount(tr["gain"], minlength=p.m + 1)
        res = chi_square_binned(observed, expected)
        limit = chi2.ppf(0.999, res.dof)
        ok &= res.statistic < limit and tr["gain"].size >= 10**5
        details.append(f"node {node + 1}: {tr['gain'].size} steps, chi2 {res.statistic:.2f} < {limit:.2f} "
                       f"(dof {res.dof})")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    acceptance_log(8, "per-step gains are binomial", ok, "; ".join(details) + f"; {elapsed:.1f}s")
    assert ok


def test_c9_zero_degree_fraction(acceptance_log):
    start = time.perf_counter()
    worst = 0.0
    for m, A in GRID:
        p = ModelParams(m, A)
        st = propagate_aggregate(p, 10**4)[-1]
        worst = max(worst, abs(st.probs[0] - p_zero(p)))
    sim = []
    for m, A in ((1, 1.0), (2, 1.0)):
        p = ModelParams(m, A)
        net = grow(GrowthConfig(p, 10**6, seed=900 + m))
        sim.append(abs(np.mean(net.in_degree == 0) - p_zero(p)))
    elapsed = time.perf_counter() - start
    ok = worst <= 0.01 and max(sim) <= 0.005
    acceptance_log(9, "fraction of nodes without in-links", ok,
                   f"propagator max gap {worst:.2e}; simulator gaps "
                   + ", ".join(f"{x:.2e}" for x in sim) + f"; {elapsed:.1f}s")
    assert ok


def test_c10_determinism_and_conservation(acceptance_log):
    start = time.perf_counter()
    ok = True
    for m, A, seed in ((1, 1.0, 1), (3, 0.25, 2), (2, 5.0, 3)):
        cfg = GrowthConfig(ModelParams(m, A), 200_000, seed=seed, record_edges=True)
        a, b = grow(cfg), grow(cfg)
        ok &= a.in_degree.tobytes() == b.in_degree.tobytes()
        ok &= a.edges.tobytes() == b.edges.tobytes()
        ok &= int(a.in_degree.sum()) == m * cfg.steps
    exact = grow(GrowthConfig(ModelParams.from_rational(2, "1/3"), 100_000, seed=4))
    ok &= int(exact.in_degree.sum()) == 2 * 100_000
    worst_mass = 0.0
    for m, A in ((1, 1.0), (2, 0.5), (5, 5.0)):
        p = ModelParams(m, A)
        for st in iter_aggregate(p, 2000, checkpoints=range(1, 2001)):
            worst_mass = max(worst_mass, abs(math.fsum(st.probs) - 1.0))
        for st in iter_per_node(p, 3, 500):
            worst_mass = max(worst_mass, abs(math.fsum(st.probs) - 1.0))
    ok &= worst_mass <= 1e-9
    elapsed = time.perf_counter() - start
    acceptance_log(10, "determinism and conservation", ok,
                   f"byte-identical reruns, sum q = mT exact, max |mass - 1| {worst_mass:.1e}; {elapsed:.1f}s")
    assert ok
