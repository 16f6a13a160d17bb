"""Command-line experiment runner.

Each subcommand runs one experiment kind and writes ``<kind>.csv`` with the
columns ``quantity,t,k,estimate,se,bound,bound_name,config_hash,seed`` plus a
``<kind>_summary.json`` pairing measured quantities with their bounds.
Exit status: 0 all verdicts pass or indeterminate, 2 some verdict fails, 1 error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import concentration as conc
from . import config as cfgmod
from . import estimators as est
from . import gibbs1d as g1
from .dynamics import ProcessSpec
from .lattice import Configuration, Lattice, LocalFunction, delta_vector, lp_norm
from .montecarlo import substream
from .random_walk import JumpKernel, local_limit_prefactor, psi_l2_squared, transition_row

CSV_COLUMNS = ("quantity", "t", "k", "estimate", "se", "bound", "bound_name", "config_hash", "seed")
SE_FACTOR = 3.0
RELATIONS = ("le", "ge", "eq", "lt", "gt", "record")


@dataclass
class Row:
    quantity: str
    estimate: float
    se: float = 0.0
    t: float | None = None
    k: int | None = None
    bound: float | None = None
    bound_name: str = ""
    relation: str | None = None
    se_floor: float = 0.0


def verdict(row: Row) -> str | None:
    """``pass``/``fail``/``indeterminate`` against the bound; ``recorded`` rows are never gated."""
    if row.relation is None or row.bound is None:
        return None
    if row.relation == "record":
        return "recorded"
    m, b = row.estimate, row.bound
    s = SE_FACTOR * max(row.se, row.se_floor)
    tol = 1e-12 * max(1.0, abs(b)) if s == 0 else 0.0
    if row.relation == "gt":
        return "pass" if m - s > b else "fail"
    if row.relation == "lt":
        return "pass" if m + s < b else "fail"
    if math.isinf(b):
        ok = (b > 0) if row.relation == "le" else (b < 0) if row.relation == "ge" else False
        return "pass" if ok else "fail"
    if row.relation == "le":
        bad = m > b + s + tol
    elif row.relation == "ge":
        bad = m < b - s - tol
    else:
        bad = abs(m - b) > s + tol
    if bad:
        return "fail"
    if s > max(abs(b), abs(m)):
        return "indeterminate"
    return "pass"


@dataclass
class ResultBundle:
    kind: str
    config: dict
    config_hash: str
    rows: list[Row] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return int(self.config["seed"])

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.quantity, _fmt(r.t), _fmt(r.k), _fmt(r.estimate), _fmt(r.se), _fmt(r.bound),
                        r.bound_name, self.config_hash, self.seed])
        return buf.getvalue()

    def summary(self) -> dict:
        checks, counts = [], {"pass": 0, "fail": 0, "indeterminate": 0, "recorded": 0}
        for r in self.rows:
            v = verdict(r)
            if v is None:
                continue
            counts[v] += 1
            checks.append({
                "quantity": r.quantity, "t": r.t, "k": r.k, "measured": _json_num(r.estimate), "se": _json_num(r.se),
                "bound": _json_num(r.bound), "bound_name": r.bound_name, "relation": r.relation, "verdict": v,
            })
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "config": self.config,
            "checks": checks,
            "counts": counts,
            "status": "fail" if counts["fail"] else "pass",
        }

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{self.kind}.csv", out / f"{self.kind}_summary.json"
        csv_path.write_text(self.csv_text())
        json_path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _json_num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


# partial results and merging


@dataclass(frozen=True)
class Partial:
    """Additive sufficient statistics of a replica range ``[lo, hi)`` for one configuration."""

    config_hash: str
    lo: int
    hi: int
    stats: dict


def merge(partials: Sequence[Partial]) -> Partial:
    """Sum statistics of disjoint replica ranges; the fold runs in range order so the result is order-independent."""
    if not partials:
        raise ValueError("nothing to merge")
    hashes = {p.config_hash for p in partials}
    if len(hashes) != 1:
        raise ValueError(f"partials come from different configurations: {sorted(hashes)}")
    ordered = sorted(partials, key=lambda p: (p.lo, p.hi))
    for a, b in zip(ordered, ordered[1:]):
        if b.lo < a.hi:
            raise ValueError(f"replica ranges [{a.lo},{a.hi}) and [{b.lo},{b.hi}) overlap")
    keys = sorted(ordered[0].stats)
    if any(sorted(p.stats) != keys for p in ordered):
        raise ValueError("partials carry different statistics")
    stats = {}
    for k in keys:
        acc = np.asarray(ordered[0].stats[k], dtype=float).copy()
        for p in ordered[1:]:
            acc = acc + np.asarray(p.stats[k], dtype=float)
        stats[k] = acc
    return Partial(ordered[0].config_hash, ordered[0].lo, ordered[-1].hi, stats)


# experiments


def _kernel(cfg: dict) -> JumpKernel:
    return JumpKernel.nearest_neighbor(cfg["lattice"]["d"])


def _point(k: int, d: int) -> tuple[int, ...]:
    return (int(k),) + (0,) * (d - 1)


def _function(cfg: dict) -> LocalFunction:
    return LocalFunction.from_literal(cfg["function"])


def _interaction(cfg: dict) -> g1.Interaction:
    return g1.Interaction.from_literal(cfg["process"])


def _affine_weights(f: LocalFunction) -> tuple[float, np.ndarray] | None:
    from .lattice import _bits

    X = np.hstack([np.ones((2**f.m, 1)), _bits(f.m)])
    coef, *_ = np.linalg.lstsq(X, f.values, rcond=None)
    if np.max(np.abs(X @ coef - f.values)) > 1e-12:
        return None
    return float(coef[0]), coef[1:]


def exact_sep_variance(f: LocalFunction, rho: float, kernel: JumpKernel, t: float, lattice: Lattice) -> float | None:
    """``Var(S_t f)`` under Bernoulli(rho) for affine ``f`` via duality; ``None`` otherwise."""
    aff = _affine_weights(f)
    if aff is None:
        return None
    _, a = aff
    shape = (lattice.L,) * lattice.d
    row = transition_row(kernel, t, lattice.L).values.reshape(shape)
    g = np.zeros(shape)
    for w, x in zip(a, f.sites):
        g += w * np.roll(row, x, axis=tuple(range(lattice.d)))
    return float(rho * (1 - rho) * np.sum(g**2))


def run_rw(cfg: dict, workers: int) -> list[Row]:
    d, L = cfg["lattice"]["d"], cfg["lattice"]["L"]
    kern = _kernel(cfg)
    tol = cfg["probe"]["tol"]
    pref = local_limit_prefactor(kern)
    rows = []
    for t in cfg["time"]["grid"]:
        row = transition_row(kern, t, L, tol)
        for k in cfg["probe"]["ks"]:
            rows.append(Row("p_t(0,k)", row.at(_point(k, d)), t=t, k=k))
        if t > 0:
            rows.append(Row("return_probability", row.at(_point(0, d)), t=t, k=0,
                            bound=pref * t ** (-d / 2), bound_name="local_limit_envelope", relation="le"))
        rows.append(Row("row_sum_deficit", abs(1.0 - row.values.sum()), t=t,
                        bound=row.error_bound + 1e-14, bound_name="poisson_tail", relation="le"))
        rows.append(Row("psi_l2_squared", psi_l2_squared(kern, t, L, tol), t=t))
        big = transition_row(kern, t, 2 * L, tol)
        diff = max(abs(row.at(x) - big.at(x)) for x in map(tuple, Lattice(d, L).points))
        rows.append(Row("wrap_difference", diff, t=t, bound=1e-9, bound_name="torus_wrap_tolerance", relation="le"))
    return rows


def run_bounds(cfg: dict, workers: int) -> list[Row]:
    b = cfg["bounds"]
    bp = conc.BoundParams(c=b["c"], u=b["u"], v=b["v"], p=b["p"], a=b["a"], kappa=b["kappa"])
    t = cfg["time"]["grid"][0]
    rows = [
        Row("deviation_bound", conc.deviation_bound(bp, b["psi"], b["df"])),
        Row("lp_relaxation_bound", conc.lp_relaxation_bound(bp, b["psi"], b["df"])),
        Row("moment_constant", conc.moment_constant(b["p"])),
        Row("moment_from_tail", conc.moment_from_tail(b["p"], b["kappa"])),
        Row("spatial_average_deviation_bound",
            conc.spatial_average_deviation_bound(bp, b["psi"], b["df"], b["size"], b["alpha"])),
        Row("mesoscopic_bound", conc.mesoscopic_bound(b["p"], t, b["size"], b["growth"], b["alpha"], b["eps"], b["df"],
                                                      b["prefactor"], b["d"]), t=t),
    ]
    if float(b["p"]).is_integer():
        rows.append(Row("nonuniform_lp_bound", conc.nonuniform_lp_bound(int(b["p"]), b["d_norm"], b["df"])))
    return rows


def run_sep(cfg: dict, workers: int) -> list[Row]:
    d, L = cfg["lattice"]["d"], cfg["lattice"]["L"]
    lat = Lattice(d, L)
    kern = _kernel(cfg)
    spec = ProcessSpec.sep(kern)
    rho, seed = cfg["process"]["rho"], cfg["seed"]
    f = _function(cfg)
    rep = cfg["replicas"]
    c = cfg["bounds"]["c"]
    a = cfg["probe"]["a"]
    ts = sorted(cfg["time"]["grid"])
    delta = delta_vector(f)
    df1 = lp_norm(delta, 1)
    kernels = est.estimate_psi_grid(spec, ts, est.ProductMeasureSpec(rho), rep["n"], seed, lat, workers)
    rows = []
    for t, K in zip(ts, kernels):
        exact = transition_row(kern, t, L)
        for k in cfg["probe"]["ks"]:
            p = exact.at(_point(k, d))
            s = K.lattice.site(_point(k, d))
            rows.append(Row("psi_hat", K.values[s], float(K.se[s]), t, k, p, "exact_duality", "eq",
                            se_floor=max(math.sqrt(p * (1 - p) / K.n), 1.0 / K.n)))
        rows.append(Row("psi_hat_total", float(K.values.sum()), 0.0, t, bound=1.0,
                        bound_name="single_discrepancy_conservation", relation="eq"))
        p2t = transition_row(kern, 2 * t, L).values[0]
        sub = seed + 1000003 * (1 + ts.index(t))
        var = est.estimate_var_stf(est.ProductMeasureSpec(rho), f, spec, t, rep["n_outer"], rep["n_inner"], sub, lat, workers)
        ex = exact_sep_variance(f, rho, kern, t, lat)
        if ex is not None:
            rows.append(Row("var_stf", var.estimate, var.se, t, bound=ex, bound_name="exact_variance_duality", relation="eq"))
        psi2 = math.sqrt(p2t)
        rows.append(Row("var_stf", var.estimate, var.se, t, bound=conc.variance_bound(c, psi2, df1, "8c"),
                        bound_name="variance_bound_8c", relation="le"))
        rows.append(Row("var_stf", var.estimate, var.se, t, bound=conc.variance_bound(c, psi2, df1, "2c"),
                        bound_name="variance_bound_2c", relation="le"))
        rows.append(Row("var_stf", var.estimate, var.se, t, bound=conc.variance_bound(c, psi2, df1, "c"),
                        bound_name="variance_bound_c", relation="record"))
        dev = est.empirical_deviation(est.ProductMeasureSpec(rho), f, spec, t, a, rep["n_outer"], rep["n_inner"],
                                      sub + 17, lat, workers)
        level = max(a - SE_FACTOR * dev.inner_se, 0.0)
        rows.append(Row("deviation_probability", dev.probability.estimate, dev.probability.se, t,
                        bound=conc.sep_deviation_bound(level, c, p2t, df1), bound_name="sep_deviation_bound",
                        relation="le"))
    return rows


def run_asep(cfg: dict, workers: int) -> list[Row]:
    L = cfg["lattice"]["L"]
    rho, p = cfg["process"]["rho"], cfg["process"]["p"]
    rep, seed = cfg["replicas"], cfg["seed"]
    ks = cfg["probe"]["ks"]
    f = _function(cfg)
    df2 = lp_norm(delta_vector(f), 2)
    lat = Lattice(1, L)
    rows = []
    for gi, t in enumerate(sorted(cfg["time"]["grid"])):
        sub = seed + 7919 * gi
        drift = est.second_class_drift(rho, t, rep["n"], sub, L, p, workers)
        rows.append(Row("second_class_velocity", drift.estimate, drift.se, t, bound=(1 - 2 * rho) * (2 * p - 1),
                        bound_name="characteristic_speed", relation="eq"))
        prof = est.estimate_Psi_asep(rho, t, ks, rep["n_env"], rep["n_rep"], sub + 1, L, p, workers)
        for k, v, s in zip(prof.ks, prof.psi, prof.psi_se):
            rows.append(Row("Psi_hat", float(v), float(s), t, int(k)))
        ss = prof.sum_squared
        rows.append(Row("Psi_sum_squared", ss.estimate, ss.se, t, bound=1.0, bound_name="sub_probability", relation="le"))
        sf = est.estimate_structure_function(rho, t, ks, rep["n"], sub + 2, L, p, workers)
        law, law_se = est.second_class_law(rho, t, ks, rep["n"], sub + 3, L, p, workers)
        for k, v, s, q, qs in zip(sf.ks, sf.values, sf.se, law, law_se):
            rows.append(Row("structure_function", float(v), float(math.hypot(s, qs)), t, int(k), float(q),
                            "second_class_law", "record"))
        # one gated comparison over the probed window instead of one per k; disjoint
        # indicator events are negatively correlated, so the summed law SE is conservative
        ws = sf.window_sum
        rows.append(Row("structure_function_window", ws.estimate, math.hypot(ws.se, math.sqrt(float(np.sum(law_se**2)))),
                        t, bound=float(law.sum()), bound_name="second_class_law_window", relation="eq"))
        rows.append(Row("structure_function_sum", sf.sum_rule.estimate, sf.sum_rule.se, t, bound=1.0,
                        bound_name="particle_conservation", relation="eq"))
        spec = est.exclusion_process(p)
        var = est.estimate_var_stf(est.ProductMeasureSpec(rho), f, spec, t, rep["n_outer"], rep["n_inner"], sub + 4,
                                   lat, workers)
        l2 = math.sqrt(var.estimate)
        l2_se = var.se / (2 * l2) if l2 > 0 else math.sqrt(var.se)
        rows.append(Row("l2_deviation", l2, l2_se, t, bound=conc.nonuniform_lp_bound(1, math.sqrt(max(ss.estimate, 0.0)), df2),
                        bound_name="nonuniform_lp_bound_p1", relation="le"))
    return rows


def run_voter(cfg: dict, workers: int) -> list[Row]:
    d, L = cfg["lattice"]["d"], cfg["lattice"]["L"]
    kern = _kernel(cfg)
    ts = sorted(cfg["time"]["grid"])
    kernels = est.estimate_psi_grid(ProcessSpec.voter(kern), ts, est.ProductMeasureSpec(cfg["process"]["rho"]),
                                    cfg["replicas"]["n"], cfg["seed"], Lattice(d, L), workers)
    sym = kern.symmetrized()
    return [
        Row("psi_l2_squared_hat", K.l2_squared, K.l2_squared_se, t, bound=float(transition_row(sym, t, L).values[0]),
            bound_name="symmetrized_walk_return", relation="eq")
        for t, K in zip(ts, kernels)
    ]


def run_contact(cfg: dict, workers: int) -> list[Row]:
    d, L = cfg["lattice"]["d"], cfg["lattice"]["L"]
    ts = sorted(cfg["time"]["grid"])
    spec = ProcessSpec.contact(cfg["process"]["lam"], d)
    kernels = est.estimate_psi_grid(spec, ts, Configuration.zeros(Lattice(d, L)), cfg["replicas"]["n"], cfg["seed"],
                                    workers=workers)
    rows = [Row("psi_l2_squared_hat", K.l2_squared, K.l2_squared_se, t) for t, K in zip(ts, kernels)]
    pts = [(t, K.l2_squared, K.l2_squared_se) for t, K in zip(ts, kernels) if K.l2_squared > 0]
    if len(pts) >= 4:
        fit = est.fit_decay(pts, "exponential")
        rows.append(Row("decay_rate", fit.value, fit.se, bound=0.0, bound_name="positive_rate", relation="gt"))
    return rows


def run_glauber(cfg: dict, workers: int) -> list[Row]:
    L = cfg["lattice"]["L"]
    inter = _interaction(cfg)
    C = g1.dobrushin_matrix(inter)
    ts = sorted(cfg["time"]["grid"])
    rows = [Row("dobrushin_row_sum", C.row_sum, bound=1.0, bound_name="uniqueness_regime", relation="lt")]
    kernels = est.estimate_psi_grid(ProcessSpec.glauber(inter), ts, est.ProductMeasureSpec(cfg["process"]["rho"]),
                                    cfg["replicas"]["n"], cfg["seed"], Lattice(1, L), workers)
    window = cfg["probe"]["window"]
    in_regime = C.row_sum < 1
    pts = []
    for t, K in zip(ts, kernels):
        s = int(np.argmax(K.values))
        pts.append((t, float(K.values[s]), float(K.se[s])))
        rows.append(Row("psi_max", float(K.values[s]), float(K.se[s]), t))
        if not in_regime:
            continue
        erow = g1.circulant_exp_row(C, t, window)
        for k in cfg["probe"]["ks"]:
            j = K.lattice.site((k,))
            rows.append(Row("psi_hat", float(K.values[j]), float(K.se[j]), t, k, bound=float(erow[k % window]),
                            bound_name="dobrushin_semigroup_entry", relation="le"))
        l2 = math.sqrt(max(K.l2_squared, 0.0))
        l2_se = K.l2_squared_se / (2 * l2) if l2 > 0 else math.sqrt(K.l2_squared_se)
        rows.append(Row("psi_l2", l2, l2_se, t, bound=g1.glauber_decay_bound(C, t, window),
                        bound_name="glauber_decay_bound", relation="le"))
    if in_regime and len(pts) >= 4 and all(v > 0 for _, v, _ in pts):
        fit = est.fit_decay(pts, "exponential")
        rows.append(Row("psi_max_decay_rate", fit.value, fit.se, bound=(1 - C.row_sum) / 2,
                        bound_name="half_dobrushin_gap", relation="ge"))
    return rows


def run_gibbs1d(cfg: dict, workers: int) -> list[Row]:
    inter = _interaction(cfg)
    pr, rep, seed = cfg["probe"], cfg["replicas"], cfg["seed"]
    rows = [Row("gamma_bound", g1.gamma_bound(inter, m), k=m) for m in range(1, pr["m_max"] + 1)]
    chain = g1.hoc_return_probs(g1.hoc_gammas(inter, pr["horizon"]), pr["horizon"])
    tails, divergent = chain.tail_sums(pr["j_max"])
    vol = g1.GibbsVolume(inter, pr["N"])
    prof = g1.estimate_theta(vol, pr["j_max"], rep["n"], seed=seed, n_runs=rep["n_runs"], q=pr["q"])
    name = "hoc_tail_sum_divergent" if divergent else "hoc_tail_sum"
    for j, th, s in zip(prof.j, prof.theta, prof.se):
        rows.append(Row("theta_hat", float(th), float(s), k=int(j), bound=float(tails[j]), bound_name=name, relation="le"))
    summ = g1.theta_summability(prof, pr["q"], chain)
    rows.append(Row("theta_summability", summ.total, bound_name="divergent" if summ.divergent else ""))
    small = g1.GibbsVolume(inter, pr["tv_N"])
    samples = g1.sample_gibbs(small, rep["n_samples"], substream(seed, "tv"))
    emp = np.bincount(g1.configuration_index(samples), minlength=2 ** pr["tv_N"]) / rep["n_samples"]
    rows.append(Row("gibbs_tv", g1.total_variation(emp, g1.boltzmann_weights(small)), bound=0.01,
                    bound_name="tv_tolerance", relation="le"))
    rng = substream(seed, "rnd")
    confs = g1.sample_gibbs(vol, 200, rng)
    ratio = max(g1.flip_ratio(vol, confs[r], int(i)) for r in range(200) for i in rng.integers(0, vol.N, 50))
    rows.append(Row("flip_ratio_max", ratio, bound=g1.rnd_bound(inter), bound_name="radon_nikodym_bound", relation="le"))
    return rows


EXPERIMENTS = {
    "rw": run_rw,
    "bounds": run_bounds,
    "sep": run_sep,
    "asep": run_asep,
    "voter": run_voter,
    "contact": run_contact,
    "glauber": run_glauber,
    "gibbs1d": run_gibbs1d,
}


def run(config: dict, kind: str | None = None, workers: int | None = None) -> ResultBundle:
    """Run one experiment; the config is validated and completed with per-kind defaults."""
    cfg = cfgmod.effective(config, kind)
    w = workers if workers is not None else cfg.get("workers", 1)
    rows = EXPERIMENTS[cfg["kind"]](cfg, w)
    return ResultBundle(cfg["kind"], cfg, cfgmod.config_hash(cfg), rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="couplinglab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in cfgmod.KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", type=Path, help="TOML experiment config")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, help="output directory (default: config output.dir or ./results)")
        p.add_argument("--workers", type=int, help="worker threads; never changes the numbers")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = cfgmod.load(args.config) if args.config else {}
        if args.seed is not None:
            config["seed"] = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise cfgmod.ConfigError(["workers: must be >= 1"])
            config["workers"] = args.workers
        bundle = run(config, args.kind)
        out = args.out or Path(bundle.config.get("output", {}).get("dir", "results"))
        csv_path, json_path = bundle.write(out)
    except (cfgmod.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summ = bundle.summary()
    c = summ["counts"]
    print(f"{bundle.kind}: {c['pass']} pass, {c['fail']} fail, {c['indeterminate']} indeterminate, "
          f"{c['recorded']} recorded -> {csv_path}")
    return 2 if c["fail"] else 0


if __name__ == "__main__":
    sys.exit(main())
