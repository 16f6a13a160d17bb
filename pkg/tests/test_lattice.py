from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from couplinglab.lattice import (
    MAX_DEPENDENCE,
    Configuration,
    Lattice,
    LocalFunction,
    SpatialAverageSpec,
    delta_vector,
    flip,
    lp_norm,
    shift,
    spatial_average,
    swap,
)

GOLDEN = Path(__file__).parent / "golden"


def _random_function(rng, m, span=4, d=1):
    sites = set()
    while len(sites) < m:
        sites.add(tuple(int(c) for c in rng.integers(-span, span + 1, d)))
    return LocalFunction(tuple(sorted(sites)), rng.normal(size=2**m))


@pytest.mark.parametrize("d,L", [(1, 3), (1, 5), (1, 7), (2, 3), (2, 5), (2, 7)])
def test_spiral_is_bijective_and_shell_monotone(d, L):
    lat = Lattice(d, L)
    idx = np.array([lat.spiral_index(x) for x in lat.points])
    assert sorted(idx.tolist()) == list(range(lat.N))
    assert lat.spiral_index((0,) * d) == 0
    shell = np.abs(lat.points).max(axis=1)
    order = np.argsort(idx)
    assert np.all(np.diff(shell[order]) >= 0)


def test_spiral_golden_table():
    lat = Lattice(2, 5)
    lines = [ln for ln in (GOLDEN / "spiral_d2_L5.txt").read_text().splitlines() if not ln.startswith("#")]
    expected = [tuple(int(c) for c in ln.split()) for ln in lines]
    got = [lat.point(s) for s in lat.spiral_order()]
    assert got == expected


def test_spiral_first_shell_in_d2():
    lat = Lattice(2, 7)
    for x in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
        assert 1 <= lat.spiral_index(x) <= 8


def test_spiral_rejects_out_of_range():
    with pytest.raises(ValueError):
        Lattice(1, 5).spiral_index((3,))
    with pytest.raises(ValueError):
        Lattice(2, 5).spiral_index((0,))


def test_site_and_point_roundtrip():
    lat = Lattice(2, 6)
    for s in range(lat.N):
        assert lat.site(lat.point(s)) == s
    assert lat.site((0, 0)) == 0
    assert lat.site((-1, 0)) == lat.site((5, 0))


def test_neighbor_table_matches_coordinates():
    lat = Lattice(2, 5)
    offs = [(1, 0), (0, -1)]
    tab = lat.neighbor_table(offs)
    for s in range(lat.N):
        x = lat.point(s)
        for j, o in enumerate(offs):
            assert tab[s, j] == lat.site((x[0] + o[0], x[1] + o[1]))


def test_flip_examples():
    lat = Lattice(1, 8)
    z = Configuration.zeros(lat)
    one = flip(z, 0)
    assert one.count() == 1 and one[0] == 1
    assert flip(one, 0) == z
    assert flip(flip(z, 2), 5) == flip(flip(z, 5), 2)


def test_swap_examples():
    rng = np.random.default_rng(0)
    lat = Lattice(1, 12)
    for _ in range(1000):
        s = Configuration.bernoulli(lat, 0.4, rng)
        i, j = rng.integers(0, lat.N, 2)
        w = swap(s, i, j)
        assert w.count() == s.count()
        assert swap(w, i, j) == s
        assert w[i] == s[j] and w[j] == s[i]
    s = Configuration(lat, [1, 1] + [0] * 10)
    assert swap(s, 0, 1) == s
    assert swap(s, 3, 3) == s


def test_shift_convention_and_inverse():
    lat = Lattice(2, 5)
    rng = np.random.default_rng(1)
    s = Configuration.bernoulli(lat, 0.5, rng)
    x = (2, -1)
    t = shift(s, x)
    for y in map(tuple, lat.points):
        assert t[lat.site(y)] == s[lat.site((y[0] - x[0], y[1] - x[1]))]
    assert shift(t, (-2, 1)) == s


def test_configuration_validation():
    lat = Lattice(1, 4)
    with pytest.raises(ValueError):
        Configuration(lat, [0, 1, 2, 0])
    with pytest.raises(ValueError):
        Configuration(lat, [0, 1])
    assert Configuration.zeros(lat) <= Configuration.ones(lat)
    assert not Configuration.ones(lat) <= Configuration.zeros(lat)


def test_local_function_table_order():
    f = LocalFunction.from_callable([(0,), (1,)], lambda b: 10 * b[0] + b[1])
    assert f.values.tolist() == [0, 1, 10, 11]
    lat = Lattice(1, 6)
    s = Configuration(lat, [1, 0, 0, 0, 0, 0])
    assert f(s) == 10
    assert LocalFunction.from_literal(f.to_literal()).values.tolist() == f.values.tolist()


def test_local_function_validation():
    with pytest.raises(ValueError):
        LocalFunction(((0,), (0,)), np.zeros(4))
    with pytest.raises(ValueError):
        LocalFunction(((0,),), np.zeros(3))
    with pytest.raises(ValueError):
        LocalFunction(tuple((i,) for i in range(MAX_DEPENDENCE + 1)), np.zeros(2 ** (MAX_DEPENDENCE + 1)))


def test_delta_examples():
    assert delta_vector(LocalFunction.occupation((0,))) == {(0,): 1.0}
    prod = LocalFunction.from_callable([(0,), (1,)], lambda b: b[0] * b[1])
    assert delta_vector(prod) == {(0,): 1.0, (1,): 1.0}
    assert delta_vector(LocalFunction.constant(3.0)) == {}
    # the variation takes both flip directions, so it is never negative
    neg = LocalFunction.from_callable([(0,)], lambda b: -b[0])
    assert delta_vector(neg) == {(0,): 1.0}


def test_lp_norm_examples():
    assert lp_norm([1.0], 1) == 1.0 and lp_norm([1.0], 7.5) == 1.0
    assert lp_norm([1.0, 1.0], 2) == pytest.approx(math.sqrt(2))
    s3 = LocalFunction.from_callable([(0,), (1,), (2,)], sum)
    assert lp_norm(delta_vector(s3), 1) == 3.0
    assert lp_norm([3.0, -4.0], math.inf) == 4.0
    with pytest.raises(ValueError):
        lp_norm([1.0], 0.5)


def test_spatial_average_examples():
    f = LocalFunction.occupation((0,))
    assert spatial_average(f, SpatialAverageSpec(((0,),), 1.7)).values.tolist() == f.values.tolist()
    avg = spatial_average(f, SpatialAverageSpec(tuple((x,) for x in range(10)), 1.0))
    assert lp_norm(delta_vector(avg), 2) == pytest.approx(10**-0.5, abs=1e-12)
    prod = LocalFunction.from_callable([(0,), (1,)], lambda b: b[0] * b[1])
    avg = spatial_average(prod, SpatialAverageSpec(((0,), (1,)), 1.0))
    dv = delta_vector(avg)
    assert set(dv) == {(-1,), (0,), (1,)}
    assert [dv[(-1,)], dv[(0,)], dv[(1,)]] == pytest.approx([0.5, 1.0, 0.5])


def test_spatial_average_value_matches_direct_sum():
    rng = np.random.default_rng(4)
    lat = Lattice(1, 16)
    f = _random_function(rng, 3)
    spec = SpatialAverageSpec(((0,), (2,), (5,)), 0.5)
    avg = spatial_average(f, spec, lat)
    for _ in range(50):
        s = Configuration.bernoulli(lat, 0.5, rng)
        direct = sum(f(shift(s, x)) for x in spec.window) / 3**0.5
        assert avg(s) == pytest.approx(direct, abs=1e-12)


def test_spatial_average_wrap_overlap_is_rejected():
    f = LocalFunction.from_callable([(0,), (1,)], lambda b: b[0])
    with pytest.raises(ValueError):
        spatial_average(f, SpatialAverageSpec(((0,), (3,)), 1.0), Lattice(1, 4))


def test_contraction_under_spatial_averaging():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        f = _random_function(rng, int(rng.integers(1, 5)), span=3)
        size = int(rng.integers(1, 9))
        window = tuple((int(x),) for x in rng.choice(np.arange(-6, 7), size, replace=False))
        alpha = float(rng.choice([0.5, 1.0, 2.0]))
        p = int(rng.integers(1, 4))
        avg = spatial_average(f, SpatialAverageSpec(window, alpha))
        lhs = lp_norm(delta_vector(avg), p)
        rhs = size ** (-alpha + 1 / p) * lp_norm(delta_vector(f), 1)
        assert lhs <= rhs + 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), x=st.integers(-5, 5), y=st.integers(-5, 5))
def test_variation_of_a_shift_is_a_shift_of_the_variation(seed, x, y):
    f = _random_function(np.random.default_rng(seed), 3)
    g = f.shifted((x,))
    dg, df = delta_vector(g), delta_vector(f)
    assert dg.get((y,), 0.0) == df.get((x + y,), 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_flip_differs_at_exactly_one_site(seed):
    rng = np.random.default_rng(seed)
    lat = Lattice(2, 4)
    s = Configuration.bernoulli(lat, 0.5, rng)
    i = int(rng.integers(lat.N))
    diff = np.nonzero(flip(s, i).occupation != s.occupation)[0]
    assert diff.tolist() == [i]


def test_evaluate_many_agrees_with_call():
    rng = np.random.default_rng(3)
    lat = Lattice(2, 5)
    f = LocalFunction.from_callable([(0, 0), (1, -1), (-2, 2)], lambda b: b[0] - 2 * b[1] + 4 * b[2])
    occ = (rng.random((20, lat.N)) < 0.5).astype(np.uint8)
    vals = f.evaluate_many(occ, lat)
    for row, v in zip(occ, vals):
        assert f(Configuration(lat, row)) == v
