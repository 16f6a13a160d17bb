"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
happen; they are also collected in the terminal summary.
"""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import mpmath
import numpy as np
import pytest
from scipy import linalg, stats

from couplinglab import cli
from couplinglab import concentration as conc
from couplinglab import config as cfgmod
from couplinglab import estimators as est
from couplinglab import gibbs1d as g1
from couplinglab.dynamics import ProcessSpec, discrepancy_counts, simulate_coupled_grid
from couplinglab.lattice import Configuration, Lattice, LocalFunction, SpatialAverageSpec, delta_vector, lp_norm, spatial_average
from couplinglab.montecarlo import substream
from couplinglab.random_walk import JumpKernel, transition_row

pytestmark = pytest.mark.slow

NN1 = JumpKernel.nearest_neighbor(1)
NN2 = JumpKernel.nearest_neighbor(2)
SEP = ProcessSpec.sep(NN1)
ETA0 = LocalFunction.occupation((0,))
CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))


def _floor_se(se, p, n):
    """Sample SE with a binomial floor, so cells never hit all runs or none of them carry zero error."""
    return np.maximum(se, np.maximum(np.sqrt(p * (1 - p) / n), 1.0 / n))


def test_1_random_walk_oracle(acceptance):
    worst = 0.0
    for t in (0.5, 1.0, 2.0, 4.0, 8.0):
        ref = float(mpmath.exp(-t) * mpmath.besseli(0, t))
        worst = max(worst, abs(transition_row(NN1, t, 512).at((0,)) - ref))
    ts = np.geomspace(8, 64, 8)
    fit1 = est.fit_decay([(t, transition_row(NN1, 2 * t, 1024).values[0], 0.0) for t in ts], "power")
    fit2 = est.fit_decay([(t, transition_row(NN2, 2 * t, 128).values[0], 0.0) for t in ts], "power")
    ok = worst < 1e-9 and abs(fit1.value + 0.5) <= 0.05 and abs(fit2.value + 1.0) <= 0.08
    acceptance(1, ok, f"max |p_t(0,0) - e^-t I_0(t)| = {worst:.2e}; power d=1 {fit1.value:.4f}, d=2 {fit2.value:.4f}")
    assert ok


def test_2_sep_duality(acceptance):
    lat = Lattice(1, 256)
    n = 100_000
    kernels = est.estimate_psi_grid(SEP, [1.0, 4.0], est.ProductMeasureSpec(0.5), n, seed=202, lattice=lat)
    zmax = 0.0
    for K in kernels:
        exact = transition_row(NN1, K.t, 256).values
        zmax = max(zmax, float(np.max(np.abs(K.values - exact) / _floor_se(K.se, exact, n))))
    var_z = []
    for rho, t in itertools.product((0.3, 0.5), (1.0, 4.0)):
        v = est.estimate_var_stf(est.ProductMeasureSpec(rho), ETA0, SEP, t, 2000, 8, seed=int(10 * rho + t), lattice=lat)
        exact = rho * (1 - rho) * transition_row(NN1, 2 * t, 256).values[0]
        var_z.append(abs(v.estimate - exact) / v.se)
    ok = zmax < 4 and max(var_z) <= 3
    acceptance(2, ok, f"psi_hat max deviation {zmax:.2f} SE (need < 4); variance identity max {max(var_z):.2f} SE (need <= 3)")
    assert ok


def test_3_sep_bound_suite(acceptance):
    cfg = cfgmod.load(Path(__file__).parent.parent / "configs" / "sep.toml")
    cfg["time"]["grid"] = [1.0, 2.0, 4.0, 8.0]
    bundle = cli.run(cfg)
    gated = [r for r in bundle.rows if r.bound_name in ("sep_deviation_bound", "variance_bound_8c")]
    verdicts = [cli.verdict(r) for r in gated]
    c_form = [r for r in bundle.rows if r.bound_name == "variance_bound_c"]
    c_held = sum(r.estimate <= r.bound for r in c_form)
    ok = len(gated) == 8 and "fail" not in verdicts
    acceptance(3, ok, f"{verdicts.count('pass')} pass, {verdicts.count('indeterminate')} indeterminate, "
                      f"{verdicts.count('fail')} fail of {len(gated)} gated; constant-c form held at {c_held}/{len(c_form)} (recorded)")
    assert ok


def test_4_gemb_exhaustive(acceptance):
    rng = np.random.default_rng(4)
    failures = checked = 0
    for _ in range(100):
        m = int(rng.integers(1, 7))
        sites = tuple((int(x),) for x in rng.choice(np.arange(-10, 11), m, replace=False))
        f = LocalFunction(sites, rng.normal(scale=rng.uniform(0.1, 3.0), size=2**m))
        for rho in (0.2, 0.5, 0.8):
            checked += 1
            failures += not conc.gemb_exhaustive_check(f, rho, 0.125).holds
    ok = failures == 0
    acceptance(4, ok, f"{checked - failures}/{checked} (f, rho) instances satisfy the c=1/8 bound")
    assert ok


def test_5_contraction_under_spatial_averaging(acceptance):
    rng = np.random.default_rng(5)
    worst = -math.inf
    for _ in range(200):
        m = int(rng.integers(1, 5))
        sites = tuple((int(x),) for x in rng.choice(np.arange(-3, 4), m, replace=False))
        f = LocalFunction(sites, rng.normal(size=2**m))
        size = int(rng.integers(1, 9))
        window = tuple((int(x),) for x in rng.choice(np.arange(-6, 7), size, replace=False))
        alpha = float(rng.choice([0.5, 1.0, 2.0]))
        p = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
        lhs = lp_norm(delta_vector(spatial_average(f, SpatialAverageSpec(window, alpha))), p)
        rhs = size ** (-alpha + 1 / p) * lp_norm(delta_vector(f), 1)
        worst = max(worst, lhs - rhs)
    ok = worst <= 1e-12
    acceptance(5, ok, f"max (lhs - rhs) over 200 instances = {worst:.3e}")
    assert ok


def _sep_ring_law(L, start, t):
    states = [s for s in itertools.product((0, 1), repeat=L) if sum(s) == sum(start)]
    index = {s: k for k, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for s in states:
        for x in range(L):
            for y in ((x + 1) % L, (x - 1) % L):
                if s[x] and not s[y]:
                    u = list(s)
                    u[x], u[y] = 0, 1
                    Q[index[s], index[tuple(u)]] += 0.5
    Q -= np.diag(Q.sum(axis=1))
    return index, linalg.expm(t * Q)[index[tuple(start)]]


def test_6_coupling_correctness(acceptance):
    L, t, runs = 6, 0.7, 100_000
    start = (1, 1, 1, 0, 0, 0)
    index, law = _sep_ring_law(L, start, t)
    a0 = np.tile(np.array(start, np.uint8), (runs, 1))
    b0 = np.tile(np.array((0, 1, 0, 1, 0, 1), np.uint8), (runs, 1))
    a, _ = simulate_coupled_grid(a0, b0, SEP, Lattice(1, L), [t], substream(6, "chi2"))
    obs = np.bincount([index[tuple(int(v) for v in row)] for row in a[:, 0]], minlength=law.size)
    pval = stats.chisquare(obs, runs * law).pvalue

    specs = {
        "SEP": SEP, "ASEP": ProcessSpec.asep(0.8), "Voter": ProcessSpec.voter(NN1),
        "Contact": ProcessSpec.contact(0.8), "Glauber": ProcessSpec.glauber(g1.Interaction(0.3, 5.0, R=3)),
    }
    lat = Lattice(1, 32)
    rng = np.random.default_rng(66)
    violations = 0
    for name, spec in specs.items():
        low = (rng.random((10_000, lat.N)) < 0.3).astype(np.uint8)
        high = np.maximum(low, (rng.random((10_000, lat.N)) < 0.3).astype(np.uint8))
        x, y = simulate_coupled_grid(low, high, spec, lat, [0.5, 2.0, 5.0], substream(6, "mono", name))
        violations += int(np.any(x > y, axis=(1, 2)).sum())

    envs = (rng.random((10_000, 64)) < 0.5).astype(np.uint8)
    _, sizes = discrepancy_counts(envs, ProcessSpec.asep(0.8), Lattice(1, 64), [1.0, 5.0, 20.0], substream(6, "asep"))
    single = bool(np.all(sizes == 1))
    ok = pval > 0.01 and violations == 0 and single
    acceptance(6, ok, f"chi-squared p = {pval:.3f}; {violations} monotonicity violations in 5 x 10^4 runs; "
                      f"ASEP discrepancy count always 1: {single}")
    assert ok


def test_7_contact_decay(acceptance):
    ts = list(np.linspace(2, 20, 10))
    kernels = est.estimate_psi_grid(ProcessSpec.contact(0.8), ts, Configuration.zeros(Lattice(1, 256)), 20_000, seed=7)
    pts = [(t, K.l2_squared, K.l2_squared_se) for t, K in zip(ts, kernels) if K.l2_squared > 0]
    fit = est.fit_decay(pts, "exponential")
    ok = len(pts) >= 4 and fit.value > 3 * fit.se
    acceptance(7, ok, f"exponential rate {fit.value:.4f} +- {fit.se:.4f} over {len(pts)} times")
    assert ok


def test_8_voter_norm(acceptance):
    ts = [1.0, 4.0, 16.0]
    kernels = est.estimate_psi_grid(ProcessSpec.voter(NN1), ts, est.ProductMeasureSpec(0.5), 20_000, seed=8,
                                    lattice=Lattice(1, 128))
    sym = NN1.symmetrized()
    zs = [abs(K.l2_squared - transition_row(sym, t, 128).values[0]) / K.l2_squared_se for t, K in zip(ts, kernels)]
    ok = max(zs) < 4
    acceptance(8, ok, "|psi|^2 vs symmetrized walk: " + ", ".join(f"t={t:g} {z:.2f} SE" for t, z in zip(ts, zs)))
    assert ok


def test_9_glauber_dobrushin(acceptance):
    inter = g1.Interaction(0.2, 5.0, R=4)
    C = g1.dobrushin_matrix(inter)
    ts = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]
    kernels = est.estimate_psi_grid(ProcessSpec.glauber(inter), ts, est.ProductMeasureSpec(0.5), 20_000, seed=9,
                                    lattice=Lattice(1, 64))
    pts = []
    for t, K in zip(ts, kernels):
        s = int(np.argmax(K.values))
        pts.append((t, float(K.values[s]), float(K.se[s])))
    fit = est.fit_decay(pts, "exponential")
    slope, limit = -fit.value, -(1 - C.row_sum) / 2
    ok = C.row_sum < 1 and slope <= limit + fit.se
    acceptance(9, ok, f"||C||_inf = {C.row_sum:.4f}; max_k psi_hat slope {slope:.4f} +- {fit.se:.4f} (need <= {limit:.4f} + SE)")
    assert ok


def test_10_gibbs_measure_suite(acceptance):
    inter = g1.Interaction(0.5, 5.0, R=3)
    vol = g1.GibbsVolume(inter, 8, (1, 0, 1), (1, 1, 0))
    samples = g1.sample_gibbs(vol, 1_000_000, seed=10)
    emp = np.bincount(g1.configuration_index(samples), minlength=256) / samples.shape[0]
    tv = g1.total_variation(emp, g1.boltzmann_weights(vol))

    gamma2 = g1.gamma_bound(g1.Interaction(0.5, 5.0, R=4), 2)
    ref = float(mpmath.exp(mpmath.zeta(5) - 1) - 1)

    dominated = []
    for beta in (0.5, 0.2):
        model = g1.Interaction(beta, 5.0, R=6)
        chain = g1.hoc_return_probs(g1.hoc_gammas(model, 400), 400)
        sums, divergent = chain.tail_sums(12)
        prof = g1.estimate_theta(g1.GibbsVolume(model, 40), 12, 8, seed=100 + int(10 * beta), n_runs=4000)
        ok_b = bool(np.all(prof.theta <= sums[prof.j] + 4 * prof.se))
        dominated.append((beta, ok_b, divergent))

    zero = g1.GibbsVolume(g1.Interaction(0.0, 5.0, R=2), 8)
    rng = np.random.default_rng(1010)
    worst = max(g1.poincare_ratio_exact(g1.random_local_function(rng, 8, 5), zero) for _ in range(50))

    ok = tv < 0.01 and abs(gamma2 - ref) < 1e-6 and all(d[1] for d in dominated) and worst <= 1
    dom = "; ".join(f"beta={b}: {'holds' if h else 'violated'}{' (tail sums infinite)' if d else ''}" for b, h, d in dominated)
    acceptance(10, ok, f"TV {tv:.4f}; gamma_2 {gamma2:.7f} vs {ref:.7f}; dominance {dom}; "
                       f"max product-measure Poincare ratio {worst:.4f}")
    assert ok


def test_11_asep_reflection_and_drift(acceptance):
    ks = list(range(-12, 13))
    fwd = est.estimate_Psi_asep(0.3, 5.0, ks, 2000, 8, seed=111, L=256, p=0.8)
    back = est.estimate_Psi_asep(0.3, 5.0, ks, 2000, 8, seed=112, L=256, p=0.2)
    err = np.hypot(fwd.psi_se, back.psi_se[::-1])
    diff = np.abs(fwd.psi - back.psi[::-1])
    refl = float(np.max(np.where(err > 0, diff / np.where(err > 0, err, 1), np.where(diff > 0, np.inf, 0))))
    drift_z = []
    for rho in (0.3, 0.7):
        d = est.second_class_drift(rho, 50.0, 4000, seed=113 + int(10 * rho), L=512, p=1.0)
        drift_z.append((rho, d.estimate, abs(d.estimate - (1 - 2 * rho)) / d.se))
    ok = refl <= 4 and all(z <= 3 for _, _, z in drift_z)
    acceptance(11, ok, f"reflection max {refl:.2f} SE; drift " + ", ".join(
        f"rho={r}: {v:.4f} ({z:.2f} SE)" for r, v, z in drift_z))
    assert ok


def test_12_determinism(acceptance, tmp_path):
    bad = []
    for path in CONFIGS:
        outs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "4")):
            out = tmp_path / f"{path.stem}-{tag}"
            cli.main([path.stem, "--config", str(path), "--out", str(out), "--workers", workers])
            outs.append((out / f"{path.stem}.csv").read_bytes())
        if not outs[0] == outs[1] == outs[2]:
            bad.append(path.stem)
    ok = not bad
    acceptance(12, ok, f"{len(CONFIGS) - len(bad)}/{len(CONFIGS)} shipped configs byte-identical across reruns and worker counts")
    assert ok
