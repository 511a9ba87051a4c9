import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmsnet.analysis import chi_square_binned, total_variation
from dmsnet.model import DomainError, ModelParams
from dmsnet.simulator import (
    GrowthConfig,
    WeightIndex,
    degree_histogram,
    grow,
    replicate,
    sample_target,
    weight_total,
)
from dmsnet.steady import steady_gamma_distribution

from scipy.stats import chi2


def naive_target(weights, u):
    acc = 0.0
    for s, w in enumerate(weights):
        acc += w
        if u < acc:
            return s
    raise AssertionError("u beyond total")


def test_sample_target_examples():
    assert sample_target(WeightIndex.from_weights([2.5]), 1.7) == 0
    w = WeightIndex.from_weights([3.0, 1.0])
    assert sample_target(w, 3.5) == 1
    assert sample_target(w, 2.999) == 0
    assert sample_target(w, 3.0) == 1


def test_sample_target_rejects_bad_input():
    with pytest.raises(DomainError):
        sample_target(WeightIndex.from_weights([0.0, 0.0]), 0.0)
    with pytest.raises(DomainError):
        sample_target(WeightIndex.from_weights([1.0]), 1.0)


@settings(deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=70).filter(lambda w: sum(w) > 0),
       st.floats(0, 1, exclude_max=True))
def test_sample_target_matches_linear_scan(weights, frac):
    w = WeightIndex.from_weights(weights, dtype=np.int64)
    u = int(frac * sum(weights))
    assert sample_target(w, u) == naive_target(weights, u)
    wf = WeightIndex.from_weights([float(x) for x in weights])
    assert sample_target(wf, float(u)) == naive_target(weights, u)


def test_zero_weight_nodes_never_sampled():
    w = WeightIndex.from_weights([0.0, 2.0, 0.0, 0.0, 1.0, 0.0])
    us = np.linspace(0, 3.0, 2001)[:-1]
    assert set(w.sample_many(us)) == {1, 4}


def test_sampling_frequencies():
    w = WeightIndex.from_weights([2.0, 1.0, 1.0])
    n = 10**6
    rng = np.random.default_rng(7)
    draws = w.sample_many(rng.random(n) * w.total)
    freq = np.bincount(draws, minlength=3) / n
    for f, p in zip(freq, (0.5, 0.25, 0.25)):
        assert abs(f - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_weight_index_updates():
    w = WeightIndex(5)
    for x in (1.0, 2.0, 3.0):
        w.append(x)
    w.add(1, 4.0)
    assert w.weight(1) == 6.0
    assert w.prefix(2) == 7.0
    assert w.total == 10.0
    with pytest.raises(IndexError):
        w.add(3, 1.0)


def test_grow_initial_conditions():
    p = ModelParams(1, 1.0)
    assert grow(GrowthConfig(p, 1, seed=3)).in_degree.tolist() == [1]
    for seed in range(20):
        assert grow(GrowthConfig(p, 2, seed=seed)).in_degree.tolist() == [2, 0]


def test_grow_zero_attractiveness_concentrates():
    net = grow(GrowthConfig(ModelParams(2, 0.0), 100, seed=5))
    assert net.in_degree[0] == 200
    assert not net.in_degree[1:].any()


@pytest.mark.parametrize("m, A", [(1, 1.0), (3, 0.5), (2, 0.0), (4, 7.25)])
def test_link_and_weight_conservation(m, A):
    p = ModelParams(m, A)
    T = 5000
    net = grow(GrowthConfig(p, T, seed=11))
    assert net.in_degree.sum() == m * T
    assert net.in_degree[0] >= m and net.in_degree.min() >= 0
    assert weight_total(net) == pytest.approx((m + A) * T, rel=1e-12)
    assert net.index.total == pytest.approx((m + A) * T, rel=1e-9)


def test_exact_mode_weights_are_integer_exact():
    p = ModelParams.from_rational(3, "2/7")
    T = 20_000
    net = grow(GrowthConfig(p, T, seed=2))
    assert net.index.tree.dtype == np.int64
    assert int(net.index.total) == (3 * 7 + 2) * T
    assert Fraction(int(net.index.total), 7) == (3 + Fraction(2, 7)) * T
    assert net.in_degree.sum() == 3 * T


def test_determinism_and_seed_sensitivity():
    cfg = GrowthConfig(ModelParams(2, 1.0), 20_000, seed=123)
    a, b = grow(cfg), grow(cfg)
    assert a.in_degree.tobytes() == b.in_degree.tobytes()
    assert grow(cfg, replica=1).in_degree.tobytes() != a.in_degree.tobytes()
    other = GrowthConfig(ModelParams(2, 1.0), 20_000, seed=124)
    assert grow(other).in_degree.tobytes() != a.in_degree.tobytes()


def test_edge_list_consistent_with_degrees():
    p = ModelParams(3, 1.5)
    T = 500
    net = grow(GrowthConfig(p, T, seed=9, record_edges=True))
    assert net.edges.shape == (3 * T, 2)
    targets = net.edges[:, 1] - 1
    assert np.array_equal(np.bincount(targets, minlength=T), net.in_degree)
    # a link introduced at step s points to a node born strictly earlier
    assert np.all(net.edges[3:, 1] < net.edges[3:, 0])
    assert np.all(np.diff(net.edges[:, 0]) >= 0)
    assert net.edges_csv().splitlines()[0] == "step,target"


def test_same_step_gains_are_binomial_from_snapshot():
    # m = 2, A = 1: at t = 2 node 2 has weight 1 out of 6, so its gain is
    # Binomial(2, 1/6) and P(gain = 2) = 1/36.  Updating weights between the
    # two draws would give 1/6 * 2/7 = 1/21 instead.
    p = ModelParams(2, 1.0)
    cfg = GrowthConfig(p, 3, seed=2024)
    n = 40_000
    gains = np.array([grow(cfg, replica=r).in_degree[1] for r in range(n)])
    obs = np.bincount(gains, minlength=3)
    pi = 1 / 6
    expected = n * np.array([(1 - pi) ** 2, 2 * pi * (1 - pi), pi**2])
    res = chi_square_binned(obs, expected)
    assert res.statistic < chi2.ppf(0.999, res.dof)
    sd = math.sqrt(n * (1 / 36) * (35 / 36))
    assert abs(obs[2] - n / 36) < 4 * sd
    assert abs(obs[2] - n / 21) > 10 * sd


def test_tracked_node_records_weights():
    p = ModelParams(2, 1.0)
    net = grow(GrowthConfig(p, 1000, seed=4), track=3)
    tr = net.tracked
    assert tr["t"][0] == 4  # node index 3 is born at t = 4
    assert tr["weight"][0] == p.A
    # weight at the start of each step is A plus links gained so far
    np.testing.assert_array_equal(tr["weight"][1:], p.A + np.cumsum(tr["gain"])[:-1])
    assert p.A + tr["gain"].sum() == p.A + net.in_degree[3]


def test_degree_histogram_examples():
    from dmsnet.simulator import SimulatedNetwork
    h = degree_histogram(SimulatedNetwork(2, np.array([2, 0]), seed=0))
    assert h.as_dict() == {0: 0.5, 2: 0.5} and h.tail_mass == 0.0
    h = degree_histogram(SimulatedNetwork(3, np.array([1, 1, 1]), seed=0))
    assert h.as_dict() == {1: 1.0}


def test_replicate_single_matches_grow():
    cfg = GrowthConfig(ModelParams(1, 1.0), 3000, seed=77, replicas=1)
    res = replicate(cfg)
    direct = degree_histogram(grow(cfg))
    assert res.average.as_dict() == direct.as_dict()


def test_replicate_deterministic_across_workers():
    cfg = GrowthConfig(ModelParams(2, 1.0), 5000, seed=5, replicas=8)
    a = replicate(cfg, workers=1)
    b = replicate(cfg, workers=4)
    c = replicate(cfg, workers=4)
    assert a.average.mass.tobytes() == b.average.mass.tobytes() == c.average.mass.tobytes()
    assert len(a.histograms) == 8


def test_replica_average_reduces_distance():
    p = ModelParams(1, 1.0)
    ref = steady_gamma_distribution(p, 200)
    single, averaged = [], []
    for seed in range(6):
        single.append(total_variation(replicate(GrowthConfig(p, 4000, seed=seed)).average.restrict(0, 200), ref))
        averaged.append(total_variation(
            replicate(GrowthConfig(p, 4000, seed=seed, replicas=8)).average.restrict(0, 200), ref))
    assert np.mean(averaged) < np.mean(single)


@pytest.mark.slow
@pytest.mark.parametrize("m, A", [(1, 1.0), (2, 1.0), (2, 2.0)])
def test_large_run_matches_closed_form(m, A):
    p = ModelParams(m, A)
    net = grow(GrowthConfig(p, 10**6, seed=1000 + m))
    tv = total_variation(degree_histogram(net).restrict(0, 200), steady_gamma_distribution(p, 200))
    assert tv <= 0.01
