"""Stage orchestration: scenario in, RunReport out."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from . import pencil
from .cell import CellOperator, CorrectorSet
from .errors import CoefficientZero, HomogError, StageError
from .germ import Germ
from .lattice import sphere_grid
from .report import RunReport
from .scenarios import Scenario

STAGES = ("abstract-selftest", "correctors", "germ", "bands", "fit", "scan", "probes",
          "stability")
NEEDS = {"germ": {"correctors"}, "bands": {"correctors"}, "fit": {"correctors", "germ"},
         "scan": {"correctors"}, "probes": {"correctors", "germ"},
         "stability": {"correctors", "germ"}}

SELFTEST_SEED = 20240611
SELFTEST_FAMILIES = 50
FIT_TOL = (1e-6, 1e-4, 1e-3)
SANDWICH_TOL = 1e-10


@dataclass
class Options:
    seed: int = SELFTEST_SEED
    families: int = SELFTEST_FAMILIES
    sup_only: bool = False
    scan_theta_count: int | None = None
    eps_grid: tuple | None = None
    tau_grid: tuple | None = None
    s_grid: tuple | None = None


@dataclass
class Context:
    scenario: Scenario | None
    options: Options
    report: RunReport
    op: CellOperator | None = None
    cs: CorrectorSet | None = None
    germ: Germ | None = None
    extra: dict = field(default_factory=dict)


def _expects(sc: Scenario, criterion: str) -> bool:
    return criterion in sc.expect.get("criteria", ())


def default_direction(op: CellOperator) -> np.ndarray:
    d = op.lattice.d
    th = np.zeros(d)
    th[-1] = 1.0
    return th


# --- stages ---------------------------------------------------------------------------

def stage_selftest(ctx: Context):
    rep, opt = ctx.report, ctx.options
    rng = np.random.default_rng(opt.seed)
    worst_fit = np.zeros(3)
    worst_var = 1.0
    worst_sandwich = 0.0
    rows = []
    for i in range(opt.families):
        n = int(rng.integers(1, 4))
        dim = int(rng.integers(n + 2, 9))
        dim_star = int(rng.integers(dim, 9))  # cokernel dimension >= n
        fam = pencil.random_family(rng, n, dim, dim_star, with_M=bool(i % 2))
        ts = pencil.compute_threshold_set(fam)
        fits = pencil.fit_branch_expansion(fam, np.geomspace(1e-3, 1e-2, 8) * fam.t0, ts)
        errs = np.array([f.rel_errors() for f in fits]).max(axis=0)
        worst_fit = np.maximum(worst_fit, errs)
        rem = pencil.threshold_remainders(fam, np.geomspace(1e-3, 1e-1, 6) * fam.t0, ts)
        var = float(max(rem[:, c].max() / rem[:, c].min() for c in range(2)))
        worst_var = max(worst_var, var)
        sres = 0.0
        if fam.M is not None:
            sres = max(pencil.sandwich_check(fam, SANDWICH_TOL).residuals.values())
            worst_sandwich = max(worst_sandwich, sres)
        rows.append([i, n, dim, dim_star, int(fam.M is not None), *map(repr, errs),
                     repr(var), repr(sres)])
    ctx.report.tables["selftest"] = (
        ["family", "n", "dim", "dim_star", "sandwiched", "rel_gamma", "rel_mu", "rel_nu",
         "remainder_variation", "sandwich_residual"], rows)
    ctx.report.stages["abstract-selftest"] = {
        "seed": opt.seed, "families": opt.families, "worst_rel": worst_fit.tolist(),
        "worst_remainder_variation": worst_var, "worst_sandwich_residual": worst_sandwich}
    for name, v, tol in zip(("gamma", "mu", "nu"), worst_fit, FIT_TOL):
        rep.check("1", f"abstract fit {name} rel err", v, f"<= {tol:g}", v <= tol)
    rep.check("1", "sandwich identities", worst_sandwich, f"<= {SANDWICH_TOL:g}",
              worst_sandwich <= SANDWICH_TOL)
    rep.check("2", "threshold remainder variation", worst_var, "< 2", worst_var < 2)


def stage_correctors(ctx: Context):
    sc = ctx.scenario
    ctx.op = op = sc.operator()
    ctx.cs = cs = op.correctors()
    vr = cs.voigt_reuss
    ctx.report.stages["correctors"] = {
        "cutoff": op.cutoff, "modes": len(op.modes), "g0": cs.g0, "g_bar": cs.g_bar,
        "g_lower": cs.g_lower, "voigt_reuss_min_eigs": list(vr), "residuals": cs.residuals,
        "c_star": op.c_star, "t0": op.t0}
    ctx.report.check("4", "Voigt-Reuss min eig", min(vr), ">= -1e-10", min(vr) >= -1e-10)
    if "g0" in sc.expect:
        err = float(np.abs(cs.g0 - np.asarray(sc.expect["g0"])).max())
        ctx.report.check("3", "|g0 - expected|", err, "<= 1e-8", err <= 1e-8)


def stage_germ(ctx: Context):
    sc, op, rep = ctx.scenario, ctx.op, ctx.report
    ctx.germ = germ = Germ(op, ctx.cs)
    d = op.lattice.d
    thetas = sphere_grid(d, sc.theta_count or {1: 2, 2: 360, 3: 2000}.get(d, 500))
    variant = "hat" if op.hat else "Q"
    scan = germ.scan_conditions(thetas, variant)
    rep.stages["germ"] = {
        "theta_count": len(thetas), "N_zero": scan.N_zero, "N0_zero": scan.N0_zero,
        "max_norm_N": float(scan.norm_N.max()), "max_norm_N0": float(scan.norm_N0.max()),
        "max_norm_Nstar": float(scan.norm_Nstar.max()),
        "cluster_counts": sorted(set(scan.cluster_count.tolist())),
        "coupled_pairs": scan.coupled_pairs, "crossings": scan.crossings,
        "c_star": scan.c_star, "c_circ": scan.c_circ, "warnings": scan.warnings}
    rows = [[i, *map(repr, th), *map(repr, g), *map(repr, m), repr(nn[0]), repr(nn[1]), c]
            for i, th, g, m, nn, c in scan.rows()]
    header = (["theta_index"] + [f"theta{j + 1}" for j in range(d)]
              + [f"gamma{l + 1}" for l in range(op.n)] + [f"mu{l + 1}" for l in range(op.n)]
              + ["norm_N", "norm_N0", "clusters"])
    rep.tables["germ_scan"] = (header, rows)
    for flag in ("N_zero", "N0_zero"):
        if flag in sc.expect:
            got = getattr(scan, flag)
            rep.check("6" if flag == "N_zero" and _expects(sc, "6") else "flags",
                      f"{flag} flag",
                      float(scan.norm_N.max() if flag == "N_zero" else scan.norm_N0.max()),
                      f"flag == {sc.expect[flag]}", got == sc.expect[flag])
    if sc.expect.get("N_zero"):
        v = float(scan.norm_N.max())
        rep.check("6" if _expects(sc, "6") else "flags", "max_theta |N(theta)|", v,
                  "<= 1e-9", v <= 1e-9)
    if "alpha" in sc.expect and op.n == 1:
        alpha = sc.expect["alpha"]
        worst = 0.0
        for th in thetas:
            N = germ.n_operator_at(th, variant)[0][0, 0].real
            ref = -alpha / np.pi * th[1] ** 3
            worst = max(worst, abs(N - ref) / max(abs(ref), 1e-12 / 1e-6))
        rep.check("5", "N(theta) vs -alpha/pi theta2^3 (rel, abs floor 1e-12)", worst,
                  "<= 1e-6", worst <= 1e-6)
        z = max(abs(germ.n_operator_at(np.array([s, 0.0]), variant)[0][0, 0])
                for s in (1.0, -1.0))
        rep.check("5", "|N(+-1, 0)|", z, "<= 1e-12", z <= 1e-12)
        rep.stages["germ"]["alpha_expected"] = alpha


def stage_bands(ctx: Context):
    op, rep = ctx.op, ctx.report
    d = op.lattice.d
    thetas = sphere_grid(d, {1: 2, 2: 8, 3: 14}.get(d, 8))
    radii = np.geomspace(1e-2, 1.0, 9) * op.lattice.r0
    rows, ok_low, ok_gap = [], True, True
    for j, th in enumerate(thetas):
        for t in radii:
            b = dyn.band_bounds(op, t * th)
            ok_low &= b["lower_ok"]
            ok_gap &= b["gap_ok"]
            rows.append([j, repr(float(t)), *map(repr, b["E"])])
    rep.tables["bands"] = (["theta_index", "t"] + [f"E{l + 1}" for l in range(op.n + 1)], rows)
    rep.stages["bands"] = {"lower_bound_ok": bool(ok_low), "gap_bound_ok": bool(ok_gap),
                           "c_star": op.c_star, "r0": op.lattice.r0}


def stage_fit(ctx: Context):
    sc, op, rep = ctx.scenario, ctx.op, ctx.report
    th = default_direction(op)
    dirs = [th, -th]
    out = []
    worst_nu = 0.0
    min_nu = np.inf
    for theta in dirs:
        for f in dyn.fit_band_expansion(op, ctx.germ, theta):
            e = f.rel_errors()
            out.append({"theta": theta, "branch": f.branch,
                        "fit": [f.gamma, f.mu, f.nu],
                        "formula": [f.gamma_formula, f.mu_formula, f.nu_formula],
                        "rel_errors": list(e)})
            worst_nu = max(worst_nu, e[2])
            min_nu = min(min_nu, abs(f.nu_formula))
    rep.stages["fit"] = {"fits": out}
    if _expects(sc, "7"):
        rep.check("7", "min |nu(+-theta)|", min_nu, "> 1e-6", min_nu > 1e-6)
        rep.check("7", "nu formula vs quartic fit (rel)", worst_nu, "<= 1e-3", worst_nu <= 1e-3)


def stage_scan(ctx: Context):
    sc, op, rep, opt = ctx.scenario, ctx.op, ctx.report, ctx.options
    variant = "hat" if op.hat else "sandwich"
    eps = opt.eps_grid or sc.eps_grid
    taus = opt.tau_grid or sc.tau_grid
    ss = opt.s_grid or sc.s_grid
    count = opt.scan_theta_count or sc.params.get("scan_theta_count") \
        or {1: 2, 2: 8, 3: 14}.get(op.lattice.d, 8)
    ts, thetas = dyn.polar_k_grid(op, sc.t_count, theta_count=count)
    res = dyn.scan_errors(op, ctx.cs.g0, eps, taus, ss, ts, thetas, variant)
    recs = res.sup_records() if opt.sup_only else res.records
    rep.tables["scan"] = (dyn.SCAN_COLUMNS, [r.row() for r in recs])
    summary = {}
    for s in ss:
        sup = [r for r in res.sup_records() if r.s == s]
        lin = [r.ratio_linear for r in sup]
        sq = [r.ratio_sqrt for r in sup]
        summary[f"s={s:g}"] = {
            "linear_variation": max(lin) / min(lin), "sqrt_variation": max(sq) / min(sq),
            "sup": [[r.eps, r.tau, r.value, res.sup[(r.s, r.eps, r.tau)][1],
                     res.sup[(r.s, r.eps, r.tau)][2]] for r in sup]}
    rep.stages["scan"] = {"variant": variant, "theta_count": len(thetas),
                          "t_count": len(ts), "laws": summary}
    if _expects(sc, "8a") and 3.0 in ss:
        v = summary["s=3"]["linear_variation"]
        rep.check("8a", "sup value/((1+tau) eps) variation, s=3", v, "< 2", v < 2)
    if _expects(sc, "8b") and 2.0 in ss:
        v = summary["s=2"]["sqrt_variation"]
        rep.check("8b", "sup value/((1+tau^1/2) eps) variation, s=2", v, "< 2", v < 2)


def _probe_row(p: dyn.DOProbe) -> dict:
    return {"kind": p.kind, "theta": p.theta, "coefficient": p.coefficient, "eps": p.eps,
            "tau": p.tau, "s": p.s, "t": p.t, "value": p.value, "ratio": p.ratio,
            "modulus": p.modulus, "lower_bound": p.lower_bound, "inside_zone": p.inside_zone}


def stage_probes(ctx: Context):
    sc, op, rep = ctx.scenario, ctx.op, ctx.report
    out = {}
    try:
        recs = []
        for tau in (10.0, 20.0, 40.0, 80.0):
            recs.append(dyn.sharpness_probe_do(op, ctx.germ, 1 / tau, tau, "time"))
        out["time"] = [_probe_row(p) for p in recs]
        r = [p.ratio for p in recs]
        if _expects(sc, "9a"):
            mono = all(b >= a for a, b in zip(r, r[1:]))
            rep.check("9a", "time probe value/eps nondecreasing in tau", float(mono),
                      "== 1", mono)
            thr = max(0.2, recs[-1].lower_bound)
            rep.check("9a", "time probe value/eps at tau=80", r[-1],
                      f">= {thr:.4g} (proof bound with computed mu, floor 0.2)", r[-1] >= thr)
    except CoefficientZero as exc:
        out["time"] = f"CoefficientZero: {exc}"
    for s in (2.0, 1.0):
        key = f"smoothing_s{s:g}"
        try:
            recs = [dyn.sharpness_probe_do(op, ctx.germ, 0.1 / 2 ** i, 1.0, "smoothing_s2", s=s)
                    for i in range(4)]
            out[key] = [_probe_row(p) for p in recs]
            growth = [b.ratio / a.ratio for a, b in zip(recs, recs[1:])]
            out[key + "_growth"] = growth
            if s == 2.0 and _expects(sc, "9b"):
                rep.check("9b", "smoothing probe (s=2) growth per halving", min(growth),
                          ">= 1.15", min(growth) >= 1.15)
        except CoefficientZero as exc:
            out[key] = f"CoefficientZero: {exc}"
    rep.stages["probes"] = out


def stage_stability(ctx: Context):
    sc, op, rep = ctx.scenario, ctx.op, ctx.report
    op2 = sc.operator(2 * op.cutoff)
    germ2 = Germ(op2)
    th = default_direction(op)
    variant = "hat" if op.hat else "Q"
    dg = float(np.abs(germ2.cs.g0 - ctx.cs.g0).max())
    dN = float(np.abs(germ2.n_operator_at(th, variant)[0]
                      - ctx.germ.n_operator_at(th, variant)[0]).max())
    nu1, nu2 = (g.full_at(th, variant).nu for g in (ctx.germ, germ2))
    dnu = float(np.abs(nu1 - nu2).max())
    rep.stages["stability"] = {"cutoffs": [op.cutoff, op2.cutoff], "theta": th,
                               "d_g0": dg, "d_N": dN, "d_nu": dnu}
    rep.check("10", "g0 change on cutoff doubling", dg, "< 1e-8", dg < 1e-8)
    rep.check("10", "N(theta0) change on cutoff doubling", dN, "< 1e-6", dN < 1e-6)
    rep.check("10", "nu(theta0) change on cutoff doubling", dnu, "< 1e-4", dnu < 1e-4)


RUNNERS = {"abstract-selftest": stage_selftest, "correctors": stage_correctors,
           "germ": stage_germ, "bands": stage_bands, "fit": stage_fit, "scan": stage_scan,
           "probes": stage_probes, "stability": stage_stability}


def resolve_stages(stages) -> list:
    want = set(stages)
    unknown = want - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    for s in list(want):
        want |= NEEDS.get(s, set())
    return [s for s in STAGES if s in want]


def run_pipeline(scenario: Scenario | None, stages, options: Options | None = None) -> RunReport:
    order = resolve_stages(stages)
    if scenario is None and any(s != "abstract-selftest" for s in order):
        raise ValueError("scenario stages need a scenario")
    report = RunReport(scenario.name if scenario is not None else "abstract")
    ctx = Context(scenario, options or Options(), report)
    for s in order:
        t = time.perf_counter()
        try:
            RUNNERS[s](ctx)
        except HomogError as exc:
            raise StageError(s, exc) from exc
        report.timings[s] = time.perf_counter() - t
    return report
