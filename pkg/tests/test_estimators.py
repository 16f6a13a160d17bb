from __future__ import annotations

import math

import numpy as np
import pytest

from couplinglab import estimators as est
from couplinglab.concentration import product_variance
from couplinglab.dynamics import ProcessSpec
from couplinglab.gibbs1d import Interaction
from couplinglab.lattice import Configuration, Lattice, LocalFunction
from couplinglab.montecarlo import EstimateWithError, batch_bounds, batch_estimate, batch_se, map_batches, substream
from couplinglab.random_walk import JumpKernel, transition_row

NN1 = JumpKernel.nearest_neighbor(1)
SEP = ProcessSpec.sep(NN1)
ETA0 = LocalFunction.occupation((0,))


def test_batches_cover_the_range():
    for n in (0, 1, 5, 31, 32, 33, 1000):
        bounds = batch_bounds(n)
        assert sum(hi - lo for lo, hi in bounds) == n
        assert len(bounds) == min(32, n)
        sizes = [hi - lo for lo, hi in bounds]
        assert not sizes or max(sizes) - min(sizes) <= 1


def test_batch_se_equal_weights():
    vals = np.random.default_rng(0).normal(size=32)
    assert batch_se(vals) == pytest.approx(vals.std(ddof=1) / math.sqrt(32))
    e = batch_estimate(vals, [5] * 32)
    assert e.n == 160 and e.estimate == pytest.approx(vals.mean())


def test_substreams_are_stable_and_distinct():
    a = substream(3, "x", 1).random(4)
    assert np.array_equal(a, substream(3, "x", 1).random(4))
    assert not np.array_equal(a, substream(3, "x", 2).random(4))
    assert not np.array_equal(a, substream(4, "x", 1).random(4))


def test_map_batches_order_is_schedule_free():
    def fn(b, lo, hi):
        return b, float(substream(1, b).random())

    assert map_batches(fn, 100, 1) == map_batches(fn, 100, 4)


def test_estimate_with_error_validation():
    with pytest.raises(ValueError):
        EstimateWithError(0.0, -1.0, 1)
    assert EstimateWithError(1.0, 0.1, 10).within(1.25)
    assert not EstimateWithError(1.0, 0.1, 10).within(1.35)


def test_stf_trivial_cases():
    lat = Lattice(1, 16)
    s = Configuration.bernoulli(lat, 0.5, np.random.default_rng(1))
    e = est.estimate_stf(s, ETA0, SEP, 0.0, 8, seed=1)
    assert e.estimate == ETA0(s) and e.se == 0.0
    c = est.estimate_stf(s, LocalFunction.constant(2.5), SEP, 1.0, 8, seed=1)
    assert c.estimate == 2.5 and c.se == 0.0
    with pytest.raises(ValueError):
        est.estimate_stf(s, ETA0, SEP, 1.0, 1, seed=1)


def test_stf_matches_duality():
    lat = Lattice(1, 32)
    t = 1.0
    row = transition_row(NN1, t, 32).values
    rng = np.random.default_rng(2)
    z = []
    for k in range(100):
        s = Configuration.bernoulli(lat, 0.5, rng)
        exact = float(np.dot(row, s.occupation))
        e = est.estimate_stf(s, ETA0, SEP, t, 320, seed=100 + k)
        z.append((e.estimate - exact) / max(e.se, 1e-12))
        assert abs(e.estimate - exact) <= 3 * e.se
    assert abs(np.mean(z)) < 0.5


def test_variance_at_time_zero_matches_enumeration():
    lat = Lattice(1, 16)
    rng = np.random.default_rng(3)
    f = LocalFunction(((0,), (1,), (3,)), rng.normal(size=8))
    v = est.estimate_var_stf(est.ProductMeasureSpec(0.3), f, SEP, 0.0, 4000, 2, seed=4, lattice=lat)
    assert abs(v.estimate - product_variance(f, 0.3)) <= 3 * v.se
    zero = est.estimate_var_stf(est.ProductMeasureSpec(0.3), LocalFunction.constant(1.0), SEP, 1.0, 64, 2, 4, lat)
    assert zero.estimate == 0.0


@pytest.mark.parametrize("t", [1.0, 2.0, 4.0, 8.0])
def test_exclusion_variance_matches_duality(t):
    lat = Lattice(1, 64)
    exact = 0.25 * transition_row(NN1, 2 * t, 64).values[0]
    v = est.estimate_var_stf(est.ProductMeasureSpec(0.5), ETA0, SEP, t, 2000, 8, seed=int(t), lattice=lat)
    assert abs(v.estimate - exact) <= 3 * v.se


def test_nested_variance_is_unbiased_on_independent_flips():
    # at zero coupling the heat-bath dynamics resamples every site at rate 1 independently,
    # so S_t eta(0) = e^-t eta(0) + (1 - e^-t)/2 and its variance is rho (1 - rho) e^-2t
    spec = ProcessSpec.glauber(Interaction(0.0, math.inf, R=1))
    lat = Lattice(1, 3)
    rho, t = 0.3, 0.5
    exact = rho * (1 - rho) * math.exp(-2 * t)
    vals = [est.estimate_var_stf(est.ProductMeasureSpec(rho), ETA0, spec, t, 400, 4, seed=s, lattice=lat).estimate
            for s in range(50)]
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - exact) < 2 * se


def test_negative_nested_variance_is_clamped():
    spec = ProcessSpec.glauber(Interaction(0.0, math.inf, R=1))
    lat = Lattice(1, 3)
    hits = 0
    for s in range(40):
        v = est.estimate_var_stf(est.ProductMeasureSpec(0.5), ETA0, spec, 6.0, 8, 2, seed=s, lattice=lat)
        assert v.estimate >= 0
        hits += "clamped" in v.flags
    assert hits > 0


def test_psi_at_time_zero_is_the_origin_indicator():
    lat = Lattice(1, 16)
    k = est.estimate_psi(SEP, 0.0, est.ProductMeasureSpec(0.5), 100, seed=0, lattice=lat)
    assert k.values[0] == 1.0 and k.values[1:].sum() == 0.0
    assert k.l2_squared == 1.0


def test_exclusion_psi_matches_walk():
    lat = Lattice(1, 64)
    ts = [0.5, 2.0]
    ks = est.estimate_psi_grid(SEP, ts, est.ProductMeasureSpec(0.5), 20000, seed=5, lattice=lat)
    for t, K in zip(ts, ks):
        exact = transition_row(NN1, t, 64).values
        floor = np.maximum(np.sqrt(exact * (1 - exact) / K.n), 1 / K.n)
        assert np.all(np.abs(K.values - exact) < 4 * np.maximum(K.se, floor))
        # one discrepancy, always somewhere
        assert K.values.sum() == pytest.approx(1.0, abs=1e-12)
        assert K.l2_squared == pytest.approx(transition_row(NN1, 2 * t, 64).values[0], abs=4 * K.l2_squared_se)


def test_voter_psi_norm_matches_symmetrized_walk():
    lat = Lattice(1, 64)
    ks = est.estimate_psi_grid(ProcessSpec.voter(NN1), [1.0, 4.0], est.ProductMeasureSpec(0.5), 10000, 6, lat)
    sym = NN1.symmetrized()
    for K in ks:
        exact = transition_row(sym, K.t, 64).values[0]
        assert abs(K.l2_squared - exact) < 4 * K.l2_squared_se


def test_psi_needs_a_lattice_for_measures():
    with pytest.raises(ValueError):
        est.estimate_psi(SEP, 1.0, est.ProductMeasureSpec(0.5), 10, seed=0)
    with pytest.raises(ValueError):
        est.estimate_psi_grid(SEP, [2.0, 1.0], est.ProductMeasureSpec(0.5), 10, 0, Lattice(1, 8))


def test_psi_is_independent_of_worker_count():
    lat = Lattice(1, 32)
    a = est.estimate_psi_grid(SEP, [1.0], est.ProductMeasureSpec(0.5), 500, 9, lat, workers=1)[0]
    b = est.estimate_psi_grid(SEP, [1.0], est.ProductMeasureSpec(0.5), 500, 9, lat, workers=3)[0]
    assert np.array_equal(a.values, b.values) and np.array_equal(a.se, b.se)
    assert a.l2_squared == b.l2_squared


def test_Psi_profile_trivial_and_symmetric_cases():
    prof = est.estimate_Psi_asep(0.3, 1e-9, [-1, 0, 1], 64, 4, seed=1, L=64)
    assert prof.psi.tolist() == [0.0, 1.0, 0.0]
    ks = list(range(-4, 5))
    sym = est.estimate_Psi_asep(0.4, 3.0, ks, 2000, 8, seed=2, L=64, p=0.5)
    err = np.hypot(sym.psi_se, sym.psi_se[::-1])
    assert np.all(np.abs(sym.psi - sym.psi[::-1]) <= 4 * np.maximum(err, 1e-3))
    assert sym.sum_squared.estimate <= 1 + 4 * sym.sum_squared.se
    with pytest.raises(ValueError):
        est.estimate_Psi_asep(0.3, 1.0, ks, 10, 1, seed=0)


def test_second_class_drift_and_law():
    d = est.second_class_drift(0.5, 10.0, 4000, seed=3, L=128)
    assert abs(d.estimate) <= 3 * d.se
    probs, se = est.second_class_law(0.3, 2.0, range(-40, 41), 2000, seed=4, L=128)
    assert probs.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        est.second_class_drift(0.5, 0.0, 10, seed=0)


def test_structure_function_at_time_zero_and_sum_rule():
    sf0 = est.estimate_structure_function(0.3, 0.0, [0, 1, 2], 400, seed=1, L=64)
    assert sf0.values[0] == pytest.approx(1.0, abs=3 * sf0.se[0])
    assert np.all(np.abs(sf0.values[1:]) <= 3 * sf0.se[1:])
    sf = est.estimate_structure_function(0.3, 5.0, range(-10, 11), 2000, seed=2, L=64)
    assert abs(sf.sum_rule.estimate - 1) <= 4 * sf.sum_rule.se


def test_empirical_deviation_limits():
    lat = Lattice(1, 16)
    mu = est.ProductMeasureSpec(0.5)
    zero = est.empirical_deviation(mu, ETA0, SEP, 1.0, 0.0, 64, 4, seed=1, lattice=lat)
    assert zero.probability.estimate == 1.0
    far = est.empirical_deviation(mu, ETA0, SEP, 0.0, 1.5, 64, 4, seed=1, lattice=lat)
    assert far.probability.estimate == 0.0 and far.inner_se == 0.0
    assert far.center == 0.5


def test_fit_decay_on_synthetic_data():
    t = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    power = est.fit_decay([(x, x**-0.5, 0.0) for x in t], "power")
    assert power.value == pytest.approx(-0.5, abs=1e-9)
    expo = est.fit_decay([(x, 3 * math.exp(-0.3 * x), 0.01) for x in t], "exponential")
    assert expo.value == pytest.approx(0.3, abs=1e-9)
    assert expo.log_prefactor == pytest.approx(math.log(3), abs=1e-9)
    with pytest.raises(ValueError):
        est.fit_decay([(x, -1.0, 0.1) for x in t])
    with pytest.raises(ValueError):
        est.fit_decay([(1.0, 1.0, 0.1)] * 3)
    with pytest.raises(ValueError):
        est.fit_decay([(x, 1.0, 0.1) for x in t], "linear")


def test_fit_decay_on_walk_return_probabilities():
    pts = [(t, transition_row(NN1, 2 * t, 1024).values[0], 0.0) for t in np.geomspace(8, 64, 8)]
    assert est.fit_decay(pts, "power").value == pytest.approx(-0.5, abs=0.05)


def test_product_measure_spec():
    with pytest.raises(ValueError):
        est.ProductMeasureSpec(1.0)
    lat = Lattice(1, 8)
    fixed = est.ProductMeasureSpec(sampler=lambda lat, n, rng: np.ones((n, lat.N)))
    assert fixed.sample(lat, 3, np.random.default_rng(0)).sum() == 24
