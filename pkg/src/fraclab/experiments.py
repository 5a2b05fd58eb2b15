"""Config-driven experiments and the invariant checks they report.

Every experiment returns an :class:`Outcome`: a JSON-ready summary, a list
of named pass/fail checks and plot-ready tables.  The check helpers are
plain functions so tests can call them directly.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .absorption import (AbsorptionRun, critical_exponent, radial_slope, run_absorption,
                         run_power_absorption, subcritical_check)
from .capacity import (CapacityProblem, capacity, capacity_trend, grid_search_capacity,
                       point_capacity_regime)
from .domain import DiscreteDomain, MeasureData, domain_from_descriptor, uniform_ball_density
from .kernel import KernelSpec, apply_operator, assemble_kernel, energy, truncation_energy
from .nonlinearity import Nonlinearity
from .norms import weak_norm_star, weak_norm_sup
from .potential import (UniformBall, WolffQuery, check_ball_condition, check_wolff_composition,
                        measure_growth_exponent, wolff_field, wolff_potential)
from .solver import SolveReport, minimize_J
from .source import (FixedPointConfig, fixed_point_iterate, measure_ball_constant,
                     monotone_source_iterate, solve_ball_constants)

log = logging.getLogger(__name__)

KINDS = ("linear-solve", "absorption", "power-absorption", "source-fixed-point",
         "source-monotone", "potential-suite", "capacity-suite")


class ConfigError(ValueError):
    """Schema violation; ``field`` names the offending config entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class Check:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "details": self.details}


@dataclass
class Outcome:
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)


# ---------------------------------------------------------------------------
# config parsing


def _section(cfg, name, required=True):
    if name not in cfg:
        if required:
            raise ConfigError(name, "missing")
        return None
    sec = cfg[name]
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be an object")
    return sec


def _guard(name: str, build: Callable):
    try:
        return build()
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def build_domain(desc: dict) -> DiscreteDomain:
    return _guard("domain", lambda: domain_from_descriptor(desc))


def build_kernel(desc: dict, N: int) -> KernelSpec:
    def make():
        spec = KernelSpec(float(desc["s"]), float(desc["p"]), float(desc.get("lambda_K", 1.0)),
                          desc.get("profile", "power"), desc.get("c_ns"),
                          float(desc.get("modulation_length", 0.25)),
                          float(desc.get("modulation_amplitude", 1.0)))
        spec.validate(N)
        return spec
    return _guard("kernel", make)


def build_nonlinearity(desc: Optional[dict]) -> Nonlinearity:
    if desc is None:
        return Nonlinearity.zero()

    def make():
        g = Nonlinearity.from_description(desc)
        g.check()
        return g
    return _guard("nonlinearity", make)


def measure_from_descriptor(domain: DiscreteDomain, desc: Optional[dict]) -> MeasureData:
    """Atoms at given points plus uniform-ball or constant densities.

    ``{"atoms": [{"point": [...], "mass": m}], "densities": [{"kind":
    "uniform_ball", "center": [...], "radius": r, "mass": m}, {"kind":
    "constant", "value": c}]}``.  Positions are in space, so one descriptor
    gives comparable measures on different grids.
    """
    mu = MeasureData.zero(domain)
    if not desc:
        return mu
    for a in desc.get("atoms", []):
        pt = np.asarray(a["point"], float)
        if pt.shape != (domain.dim,):
            raise ValueError(f"atom point {a['point']} has the wrong dimension")
        if np.linalg.norm(domain.interior_points[domain.nearest_node(pt)] - pt) > domain.h * np.sqrt(domain.dim):
            raise ValueError(f"atom point {a['point']} lies outside the domain")
        mu = mu + MeasureData.dirac(domain, pt, float(a.get("mass", 1.0)))
    for d in desc.get("densities", []):
        kind = d.get("kind")
        if kind == "uniform_ball":
            mu = mu + uniform_ball_density(domain, d["center"], float(d["radius"]),
                                           float(d.get("mass", 1.0)), d.get("normalize", "nodes"))
        elif kind == "constant":
            mu = mu + MeasureData.from_density(domain, np.full(domain.n_interior, float(d["value"])))
        else:
            raise ValueError(f"unknown density kind {kind!r}")
    return mu


def build_measure(domain, desc) -> MeasureData:
    return _guard("measure", lambda: measure_from_descriptor(domain, desc))


def random_measure_descriptor(rng: np.random.Generator, domain: DiscreteDomain, signed: bool = True) -> dict:
    """One or two atoms and/or a uniform ball, placed away from the boundary."""
    desc = descriptor_bounds(domain)
    lo, hi = desc[:, 0], desc[:, 1]
    span = hi - lo
    inner_lo, inner_hi = lo + 0.25 * span, hi - 0.25 * span

    def mass():
        m = rng.uniform(0.3, 1.0)
        return float(-m if signed and rng.random() < 0.3 else m)

    out = {"atoms": [], "densities": []}
    choice = int(rng.integers(3))
    if choice in (0, 2):
        for _ in range(int(rng.integers(1, 3))):
            out["atoms"].append({"point": rng.uniform(inner_lo, inner_hi).tolist(), "mass": mass()})
    if choice in (1, 2):
        out["densities"].append({"kind": "uniform_ball", "center": rng.uniform(inner_lo, inner_hi).tolist(),
                                 "radius": float(rng.uniform(0.1, 0.2) * span.min()), "mass": mass()})
    return out


def descriptor_bounds(domain: DiscreteDomain) -> np.ndarray:
    return np.asarray(domain.descriptor()["bounds"], float)


def _solve_tol(cfg):
    tol = (cfg.get("tolerances") or {}).get("solve", 1e-8)
    if not (isinstance(tol, (int, float)) and tol > 0):
        raise ConfigError("tolerances.solve", "must be a positive number")
    return float(tol)


# ---------------------------------------------------------------------------
# checks shared across experiments


def truncation_bound_check(report: SolveReport, levels=(1, 2, 4, 8), name="truncation_energy_bound") -> Check:
    """truncation_energy(u,k) ≤ k·|μ|(Ω)/min kernel factor, up to the residual's share.

    Testing the discrete equation with T_k(u) gives the bound with slack
    k·Σ|r_i| from the solver residual.  For the power profile without
    normalisation the kernel factor is 1 and the bound reads k·Λ_K·|μ|(Ω).
    """
    dom, spec = report.table.domain, report.table.spec
    lo = spec.factor_range()[0]
    tv = report.mu.total_variation
    slack = report.table.n * report.residual
    worst = -math.inf
    rows = {}
    for k in levels:
        te = truncation_energy(dom, report.field, k, spec)
        bound = k * (tv + slack) / lo
        rows[str(k)] = {"energy": te, "bound": bound}
        worst = max(worst, te - bound)
    return Check(name, worst <= 0.0, {"levels": rows})


def marcinkiewicz_check(rng, n_fields=100, n_nodes=200, exponents=(1.5, 2.0, 3.0)) -> Check:
    """star ≤ sup ≤ q/(q−1)·star on random fields with random positive weights."""
    bad = 0
    worst_lower, worst_upper = math.inf, math.inf
    for _ in range(n_fields):
        f = rng.standard_normal(n_nodes) * rng.exponential(1.0, n_nodes)
        w = rng.uniform(0.1, 1.0, n_nodes) / n_nodes
        for q in exponents:
            star = weak_norm_star(f, q, w)
            sup = weak_norm_sup(f, q, w)
            upper = q / (q - 1) * star
            worst_lower = min(worst_lower, sup - star)
            worst_upper = min(worst_upper, upper - sup)
            if not (star <= sup <= upper):
                bad += 1
    return Check("marcinkiewicz_sandwich", bad == 0,
                 {"violations": bad, "fields": n_fields, "nodes": n_nodes, "exponents": list(exponents),
                  "min_sup_minus_star": worst_lower, "min_upper_minus_sup": worst_upper})


def comparison_check(rng, domain, spec: KernelSpec, pairs=20, ps=(1.5, 2.0, 3.0), tol=1e-8,
                     solve_tol=1e-11, reports=None) -> Check:
    """u_μ ≤ u_ν nodewise for random ordered pairs μ ≤ ν."""
    n = domain.n_interior
    worst = 0.0
    rows = []
    for p in ps:
        sp = KernelSpec(spec.s, p, spec.lambda_K, spec.profile, spec.c_ns, spec.modulation_length,
                        spec.modulation_amplitude)
        sp.validate(domain.dim)
        table = assemble_kernel(domain, sp)
        for _ in range(pairs):
            dens = rng.standard_normal(n) * 2.0
            bump = np.abs(rng.standard_normal(n)) * rng.uniform(0.0, 2.0)
            mu = MeasureData.from_density(domain, dens)
            nu = MeasureData.from_density(domain, dens + bump)
            ru = minimize_J(domain, table, Nonlinearity.zero(), mu, solve_tol, diagnostics=False)
            rv = minimize_J(domain, table, Nonlinearity.zero(), nu, solve_tol, diagnostics=False)
            if reports is not None:
                reports.extend([ru, rv])
            viol = float(np.max(ru.field - rv.field))
            worst = max(worst, viol)
            rows.append({"p": p, "max_violation": viol, "converged": ru.converged and rv.converged})
    conv = all(r["converged"] for r in rows)
    return Check("comparison_principle", worst <= tol and conv,
                 {"pairs": pairs, "p": list(ps), "max_violation": worst, "tolerance": tol,
                  "all_converged": conv})


def gradient_check(rng, domain, spec: KernelSpec, fields=20, ps=(1.5, 2.0, 3.0), eps=1e-6,
                   rel_tol=1e-5) -> Check:
    """Central differences of the energy against 2·w·(Lu), coordinate by coordinate."""
    n = domain.n_interior
    w = domain.weights
    worst = 0.0
    for p in ps:
        sp = KernelSpec(spec.s, p, spec.lambda_K, spec.profile, spec.c_ns, spec.modulation_length,
                        spec.modulation_amplitude)
        sp.validate(domain.dim)
        table = assemble_kernel(domain, sp)
        for _ in range(fields):
            u = rng.standard_normal(n)
            grad = 2.0 * w * apply_operator(table, u)
            fd = np.empty(n)
            for i in range(n):
                e = np.zeros(n)
                e[i] = eps
                fd[i] = (energy(table, u + e) - energy(table, u - e)) / (2 * eps)
            rel = float(np.max(np.abs(fd - grad)) / np.max(np.abs(grad)))
            worst = max(worst, rel)
    return Check("energy_gradient", worst <= rel_tol,
                 {"fields": fields, "p": list(ps), "max_relative_error": worst, "tolerance": rel_tol})


def weak_norm_family_check(rng, domain_desc: dict, spec: KernelSpec, count=10, growth=2.0,
                           solve_tol=1e-8, reports=None) -> Check:
    """weak_norm_star(|u|^{p−1}, N/(N−sp))/|μ| on a measure family, grid h vs h/2."""
    coarse = domain_from_descriptor(domain_desc)
    fine_desc = dict(domain_desc, spacing=float(domain_desc["spacing"]) / 2)
    fine = domain_from_descriptor(fine_desc)
    N, p = coarse.dim, spec.p
    qa = N / (N - spec.sp)
    family = [random_measure_descriptor(rng, coarse) for _ in range(count)]
    ratios = {"coarse": [], "fine": []}
    for label, dom in (("coarse", coarse), ("fine", fine)):
        table = assemble_kernel(dom, spec)
        for desc in family:
            mu = measure_from_descriptor(dom, desc)
            rep = minimize_J(dom, table, Nonlinearity.zero(), mu, solve_tol, diagnostics=False)
            if reports is not None:
                reports.append(rep)
            ratios[label].append(weak_norm_star(np.abs(rep.field) ** (p - 1), qa, dom.weights)
                                 / mu.total_variation)
    factors = [f / c for f, c in zip(ratios["fine"], ratios["coarse"])]
    ok = all(np.isfinite(ratios["fine"])) and max(factors) < growth
    return Check("weak_norm_refinement", bool(ok),
                 {"count": count, "ratios_coarse": ratios["coarse"], "ratios_fine": ratios["fine"],
                  "max_growth": max(factors), "growth_limit": growth})


def dirac_slope_check(domain, u, center, expected, rel_tol=0.15, r_min=None, r_max=None) -> Check:
    r_min = 4 * domain.h if r_min is None else r_min
    r_max = domain.diam / 4 if r_max is None else r_max
    slope = radial_slope(domain, u, center, r_min, r_max)
    return Check("dirac_profile_slope", abs(slope - expected) <= rel_tol * abs(expected),
                 {"slope": slope, "expected": expected, "rel_tol": rel_tol, "r_min": r_min, "r_max": r_max})


def subcritical_random_check(rng, count=50, margin=0.05) -> Check:
    """Verdict vs sign of κ − N(p−1)/(N−sp) on random (N,s,p,κ); |log κ/q| ≥ margin."""
    agree = 0
    rows = []
    for _ in range(count):
        N = int(rng.integers(1, 4))
        s = float(rng.uniform(0.05, 0.95))
        p = 1.0 + (min(N / s, 6.0) - 1.0) * float(rng.uniform(0.05, 0.95))
        q = critical_exponent(N, s, p)
        shift = rng.uniform(margin, 1.0) * (1 if rng.random() < 0.5 else -1)
        kappa = float(q * math.exp(shift))
        v = subcritical_check(Nonlinearity.power(kappa), N, s, p)
        expected = "subcritical" if kappa < q else "supercritical"
        agree += v.verdict == expected
        rows.append({"N": N, "s": s, "p": p, "kappa": kappa, "threshold": q, "verdict": v.verdict})
    return Check("subcritical_checker", agree == count, {"count": count, "agreement": agree, "cases": rows})


def wolff_oracle_check(rel_tol=1e-6, h=1 / 16) -> Check:
    """Dirac and uniform-ball closed forms for N=2, α=0.5, p=2, R=4."""
    from .domain import ball_domain
    q = WolffQuery(0.5, 2.0, 4.0)
    dom = ball_domain([0.0, 0.0], 1.0, h)
    mu = MeasureData.dirac(dom, [0.0, 0.0])
    dirac = wolff_potential(mu, [0.25, 0.0], q)
    ball = wolff_potential(UniformBall((0.0, 0.0), 1.0, 1.0), [0.0, 0.0], q)
    e1, e2 = abs(dirac - 3.75) / 3.75, abs(ball - 1.75) / 1.75
    return Check("wolff_closed_forms", e1 <= rel_tol and e2 <= rel_tol,
                 {"dirac": dirac, "dirac_expected": 3.75, "ball": ball, "ball_expected": 1.75,
                  "rel_tol": rel_tol})


def composition_scaling_check(tau: MeasureData, kappa: float, q: WolffQuery, ts=(0.5, 1.0, 2.0, 4.0),
                              rel_tol=0.01) -> Check:
    """ratio(tτ)/ratio(τ) against t^{(κ−p+1)/(p−1)²}."""
    p = q.p
    ex = (kappa - p + 1) / (p - 1) ** 2
    base = check_wolff_composition(tau, kappa, q).ratio
    rows = []
    worst = 0.0
    for t in ts:
        r = check_wolff_composition(tau.scaled(t), kappa, q).ratio
        pred = base * t ** ex
        err = abs(r - pred) / pred
        worst = max(worst, err)
        rows.append({"t": t, "ratio": r, "predicted": pred})
    return Check("wolff_composition_scaling", worst <= rel_tol,
                 {"exponent": ex, "rows": rows, "max_rel_error": worst, "rel_tol": rel_tol})


def capacity_oracle_check(rng, alpha, beta, ambient_sizes=(1, 2, 3, 8), per_size=2, rel_tol=1e-3) -> Check:
    """capacity() against grid_search_capacity on random tiny instances."""
    rows = []
    worst = 0.0
    for m in ambient_sizes:
        for _ in range(per_size):
            pts = rng.uniform(0.0, 1.0, (m, 2))
            w = rng.uniform(0.01, 0.05, m)
            prob = CapacityProblem(alpha, beta, pts, w)
            subsets = [c for k in range(1, min(m, 3) + 1) for c in itertools.combinations(range(m), k)]
            if m > 3:
                pick = rng.choice(len(subsets), size=min(4, len(subsets)), replace=False)
                subsets = [subsets[i] for i in sorted(pick)]
            for E in subsets:
                P = prob.with_target(E)
                val = capacity(P, tol=1e-8).value
                ref = grid_search_capacity(P)
                err = abs(val - ref) / ref
                worst = max(worst, err)
                rows.append({"ambient": m, "target": list(E), "capacity": val, "grid_search": ref})
    return Check("capacity_grid_oracle", worst <= rel_tol,
                 {"instances": len(rows), "max_rel_error": worst, "rel_tol": rel_tol, "rows": rows})


def capacity_lattice_check(rng, alpha, beta, m=8, tol=1e-6) -> Check:
    """Certified monotonicity and subadditivity over all subsets of an m-node set.

    A violation counts only when the certified bounds exclude the
    inequality: lower(E₁) > value(E₂) for E₁ ⊂ E₂, or
    lower(E₁∪E₂) > value(E₁) + value(E₂).
    """
    pts = rng.uniform(0.0, 1.0, (m, 2))
    w = rng.uniform(0.01, 0.05, m)
    prob = CapacityProblem(alpha, beta, pts, w)
    res = {}
    for mask in range(1, 2 ** m):
        E = [i for i in range(m) if mask >> i & 1]
        res[mask] = capacity(prob.with_target(E), tol=tol)
    res[0] = None
    mono = sub = 0
    raw_mono = raw_sub = 0
    for a in range(1, 2 ** m):
        ra = res[a]
        for b in range(1, 2 ** m):
            rb = res[b]
            if a & b == a and a != b:
                mono += ra.lower > rb.value
                raw_mono += ra.value > rb.value
            if a < b:
                ru = res[a | b]
                sub += ru.lower > ra.value + rb.value
                raw_sub += ru.value > ra.value + rb.value
    return Check("capacity_monotone_subadditive", mono == 0 and sub == 0,
                 {"nodes": m, "subsets": 2 ** m - 1, "monotonicity_violations": mono,
                  "subadditivity_violations": sub, "uncertified_monotonicity_flags": raw_mono,
                  "uncertified_subadditivity_flags": raw_sub, "max_gap": max(r.gap for r in res.values() if r)})


def capacity_trend_check(alpha, beta, radii=(1e-1, 1e-2, 1e-3)) -> Check:
    tr = capacity_trend(alpha, beta, radii)
    return Check(f"capacity_trend_alpha{alpha:g}_beta{beta:g}", tr.verdict == tr.expected,
                 {"radii": tr.radii, "capacities": tr.capacities, "decade_factors": tr.decade_factors,
                  "verdict": tr.verdict, "expected": tr.expected})


# ---------------------------------------------------------------------------
# experiments


def _field_table(domain: DiscreteDomain, fields: dict):
    cols = ["node"] + [f"x{i}" for i in range(domain.dim)] + ["weight"] + list(fields)
    pts = domain.interior_points
    rows = []
    for i in range(domain.n_interior):
        rows.append([i, *pts[i].tolist(), float(domain.weights[i]), *[float(v[i]) for v in fields.values()]])
    return cols, rows


def _check_params(cfg, name):
    checks = cfg.get("checks") or {}
    if not isinstance(checks, dict):
        raise ConfigError("checks", "must be an object mapping check names to parameters")
    if name not in checks:
        return None
    par = checks[name]
    if par is True:
        return {}
    if not isinstance(par, dict):
        raise ConfigError(f"checks.{name}", "must be an object or true")
    return par


def _known_checks(cfg, allowed):
    for name in (cfg.get("checks") or {}):
        if name not in allowed:
            raise ConfigError(f"checks.{name}", f"unknown check for kind {cfg['kind']!r}")


def run_linear_solve(cfg, rng) -> Outcome:
    _known_checks(cfg, ("dirac_slope", "marcinkiewicz", "comparison", "gradient", "weak_norm_family"))
    dom = build_domain(_section(cfg, "domain"))
    spec = build_kernel(_section(cfg, "kernel"), dom.dim)
    mu = build_measure(dom, cfg.get("measure"))
    tol = _solve_tol(cfg)
    table = assemble_kernel(dom, spec)
    rep = minimize_J(dom, table, Nonlinearity.zero(), mu, tol, diagnostics=dom.n_interior <= 4096)
    out = Outcome()
    out.summary["solve"] = rep.summary()
    out.summary["measure"] = {"total_variation": mu.total_variation, "atoms": len(mu.atoms)}
    out.checks.append(Check("converged", rep.converged, {"residual": rep.residual, "tolerance": tol}))
    if mu.is_zero():
        out.checks.append(Check("zero_field", not np.any(rep.field), {}))
    reports = [rep]
    par = _check_params(cfg, "dirac_slope")
    if par is not None:
        if "center" in par:
            center = par["center"]
        elif mu.atoms:
            center = dom.interior_points[next(iter(mu.atoms))].tolist()
        else:
            raise ConfigError("checks.dirac_slope.center", "needed when the measure has no atom")
        expected = par.get("expected", -(dom.dim - spec.sp) / (spec.p - 1))
        out.checks.append(dirac_slope_check(dom, rep.field, center, expected, par.get("rel_tol", 0.15),
                                            par.get("r_min"), par.get("r_max")))
    par = _check_params(cfg, "marcinkiewicz")
    if par is not None:
        out.checks.append(marcinkiewicz_check(rng, par.get("fields", 100), par.get("nodes", 200),
                                              tuple(par.get("exponents", (1.5, 2.0, 3.0)))))
    par = _check_params(cfg, "comparison")
    if par is not None:
        out.checks.append(comparison_check(rng, dom, spec, par.get("pairs", 20), tuple(par.get("p", (1.5, 2.0, 3.0))),
                                           par.get("tolerance", 1e-8), reports=reports))
    par = _check_params(cfg, "gradient")
    if par is not None:
        gdom = build_domain(par["domain"]) if "domain" in par else dom
        out.checks.append(gradient_check(rng, gdom, spec, par.get("fields", 20), tuple(par.get("p", (1.5, 2.0, 3.0))),
                                         par.get("eps", 1e-6), par.get("rel_tol", 1e-5)))
    par = _check_params(cfg, "weak_norm_family")
    if par is not None:
        out.checks.append(weak_norm_family_check(rng, cfg["domain"], spec,
                                                 par.get("count", 10), par.get("growth", 2.0), tol,
                                                 reports=reports))
    _append_truncation_checks(out, reports)
    out.tables["fields"] = _field_table(dom, {"u": rep.field})
    return out


def _append_truncation_checks(out: Outcome, reports):
    small = [r for r in reports if r.table.domain.n_interior <= 4096]
    if not small:
        out.summary["truncation_energy_bound"] = "skipped: grids above 4096 nodes"
        return
    fails = [truncation_bound_check(r) for r in small]
    bad = sum(not c.passed for c in fails)
    out.checks.append(Check("truncation_energy_bound", bad == 0,
                            {"solver_outputs": len(small), "violations": bad,
                             "first": fails[0].details}))


def _nonlinearities(cfg):
    if "nonlinearities" in cfg:
        lst = cfg["nonlinearities"]
        if not isinstance(lst, list) or not lst:
            raise ConfigError("nonlinearities", "must be a non-empty list")
        return [build_nonlinearity(d) for d in lst]
    return [build_nonlinearity(_section(cfg, "nonlinearity"))]


def _measures(cfg, dom):
    if "measures" in cfg:
        lst = cfg["measures"]
        if not isinstance(lst, list) or not lst:
            raise ConfigError("measures", "must be a non-empty list")
        return [build_measure(dom, d) for d in lst]
    return [build_measure(dom, _section(cfg, "measure"))]


def run_absorption_kind(cfg, rng, power: bool) -> Outcome:
    _known_checks(cfg, ("subcritical_random",))
    dom = build_domain(_section(cfg, "domain"))
    spec = build_kernel(_section(cfg, "kernel"), dom.dim)
    gs = _nonlinearities(cfg)
    mus = _measures(cfg, dom)
    tol = _solve_tol(cfg)
    sig = cfg.get("signature") or {}
    out = Outcome()
    runs = []
    reports = []
    for gi, g in enumerate(gs):
        if power and g.kind != "power":
            raise ConfigError("nonlinearity", "power-absorption needs kind 'power'")
        for mi, mu in enumerate(mus):
            run = AbsorptionRun(dom, spec, g, mu, tol)
            if g.kind == "power" and (power or "signature" in cfg):
                run_power_absorption(run, int(sig.get("refinements", 3)), float(sig.get("level", 1.0)))
            else:
                run_absorption(run)
            reports.append(run.report)
            entry = {"nonlinearity": g.describe(), "measure_index": mi,
                     "verdict": run.verdict.verdict, "lambda_g": run.verdict.lambda_g,
                     "threshold": run.verdict.threshold, "alt_threshold": run.verdict.alt_threshold,
                     "alt_disagrees": run.verdict.alt_disagrees,
                     "c_plus": run.c_plus, "c_minus": run.c_minus, "results": run.results,
                     "checks": run.checks, "solve": run.report.summary()}
            runs.append(entry)
            for name, ok in run.checks.items():
                out.checks.append(Check(f"{name}[g{gi},mu{mi}]", ok, {}))
            if gi == 0 and mi == 0:
                out.tables["fields"] = _field_table(dom, {"u": run.report.field, "wolff_plus": run.wolff_plus,
                                                          "wolff_minus": run.wolff_minus})
    out.summary["runs"] = runs
    l1_fail = sum(not r["checks"]["l1_bound"] for r in runs)
    out.checks.append(Check("absorption_l1_bound", l1_fail == 0, {"runs": len(runs), "violations": l1_fail}))
    par = _check_params(cfg, "subcritical_random")
    if par is not None:
        out.checks.append(subcritical_random_check(rng, par.get("count", 50), par.get("margin", 0.05)))
    _append_truncation_checks(out, reports)
    return out


def run_source_fixed_point(cfg, rng) -> Outcome:
    dom = build_domain(_section(cfg, "domain"))
    spec = build_kernel(_section(cfg, "kernel"), dom.dim)
    if spec.p != 2:
        raise ConfigError("kernel.p", "source-fixed-point runs need p = 2 (linear inner solves)")
    g = build_nonlinearity(_section(cfg, "nonlinearity"))
    tau = build_measure(dom, _section(cfg, "measure"))
    if tau.total_variation > 1 + 1e-12:
        raise ConfigError("measure", "need |τ|(Ω) ≤ 1")
    ball = _section(cfg, "ball")
    kappa = _guard("ball.kappa", lambda: float(ball["kappa"]))
    table = assemble_kernel(dom, spec)
    mc = measure_ball_constant(dom, table, g, kappa)
    out = Outcome()
    out.summary["constants"] = mc
    try:
        bc = solve_ball_constants(mc["C"], mc["a"], kappa, ball.get("t"))
    except ArithmeticError as exc:
        out.summary["error"] = str(exc)
        out.checks.append(Check("ball_constants_found", False, {"message": str(exc)}))
        return out
    out.summary["ball"] = {"t0": bc.t0, "rho0": bc.rho0, "C": bc.C, "a": bc.a, "kappa": bc.kappa}
    out.checks.append(Check("ball_inequality_exact", bc.holds(bc.rho0),
                            {"lhs": bc.C * (bc.t0 ** bc.a + bc.t0 ** bc.kappa + bc.rho0), "t0": bc.t0}))
    frac = float(ball.get("rho_fraction", 0.5))
    res = fixed_point_iterate(dom, table, g, tau, FixedPointConfig(frac * bc.rho0, bc.t0, bc.C, bc.a, kappa))
    peak = max((o["norm_out"] for o in res.orbit), default=0.0)
    out.summary["orbit"] = {"rho": frac * bc.rho0, "steps": res.orbit, "message": res.message,
                            "fixed_point_residual": res.fixed_point_residual}
    out.checks.append(Check("orbit_within_ball", peak <= bc.t0 and not res.escaped, {"max_norm": peak, "t0": bc.t0}))
    out.checks.append(Check("ball_invariance", res.ball_invariance, {}))
    out.checks.append(Check("fixed_point_converged", res.converged and res.fixed_point_residual < 1e-6,
                            {"residual": res.fixed_point_residual}))
    out.tables["fields"] = _field_table(dom, {"u": res.field})
    out.tables["orbit"] = (["step", "norm_in", "norm_out", "l1_increment"],
                           [[o["step"], o["norm_in"], o["norm_out"], o["l1_increment"]] for o in res.orbit])
    esc = cfg.get("escape")
    if esc is not None:
        g_esc = build_nonlinearity({"kind": "power", "kappa": esc["kappa"]})
        point = esc.get("point", descriptor_bounds(dom).mean(axis=1).tolist())
        d = MeasureData.dirac(dom, point)
        factor = float(esc.get("rho_factor", 10.0))
        r2 = fixed_point_iterate(dom, table, g_esc, d,
                                 FixedPointConfig(factor * bc.rho0, bc.t0, bc.C, bc.a, kappa))
        out.summary["escape"] = {"kappa": esc["kappa"], "rho": factor * bc.rho0, "message": r2.message,
                                 "steps": r2.orbit}
        out.checks.append(Check("escape_flag_fires", r2.escaped, {"message": r2.message}))
    return out


def run_source_monotone(cfg, rng) -> Outcome:
    dom = build_domain(_section(cfg, "domain"))
    spec = build_kernel(_section(cfg, "kernel"), dom.dim)
    tau = build_measure(dom, _section(cfg, "measure"))
    it = _section(cfg, "iteration")
    kappa = _guard("iteration.kappa", lambda: float(it["kappa"]))
    rho = _guard("iteration.rho", lambda: float(it["rho"]))
    max_iter = int(it.get("max_iter", 50))
    if not kappa > spec.p - 1:
        raise ConfigError("iteration.kappa", "need kappa > p-1")
    table = assemble_kernel(dom, spec)
    q = WolffQuery.for_domain(dom, spec.s, spec.p)
    res = monotone_source_iterate(dom, table, kappa, tau, rho, q, max_iter=max_iter,
                                  solve_tol=min(_solve_tol(cfg), 1e-10))
    out = Outcome()
    out.summary["iteration"] = {"status": res.status, "iterates": res.iterates, "log": res.log,
                                "A": res.A, "C": res.C, "M": res.M, "admissible": res.admissible,
                                "admissibility_lhs": res.admissibility_lhs,
                                "stabilized_1pct_at": res.stabilized_1pct_at,
                                "sandwich_upper": res.sandwich_upper, "sandwich_lower": res.sandwich_lower}
    out.checks.append(Check("nodewise_monotone", res.min_increment >= -1e-12, {"min_increment": res.min_increment}))
    out.checks.append(Check("barrier_maintained", res.barrier_ok, {}))
    out.checks.append(Check("stabilized_within_1pct",
                            res.stabilized_1pct_at is not None and res.stabilized_1pct_at <= max_iter,
                            {"at": res.stabilized_1pct_at, "limit": max_iter}))
    out.tables["fields"] = _field_table(dom, {"u": res.field, "barrier": res.barrier})
    steps = [e for e in res.log if "min_increment" in e]
    out.tables["iterates"] = (["step", "min_increment", "l1_increment", "rel_change", "barrier_slack"],
                              [[e["step"], e["min_increment"], e["l1_increment"], e["rel_change"],
                                e["barrier_slack"]] for e in steps])
    probe = cfg.get("abort_probe")
    if probe is not None:
        r2 = monotone_source_iterate(dom, table, kappa, tau, rho * float(probe["rho_factor"]), q,
                                     M=res.M, C=res.C, max_iter=max_iter)
        out.summary["abort_probe"] = {"rho": rho * float(probe["rho_factor"]), "status": r2.status,
                                      "admissible": r2.admissible, "admissibility_lhs": r2.admissibility_lhs,
                                      "iterates": r2.iterates}
        out.checks.append(Check("abort_probe_triggers", r2.status == probe.get("expect", "barrier_exceeded"),
                                {"status": r2.status}))
    return out


def run_potential_suite(cfg, rng) -> Outcome:
    _known_checks(cfg, ("wolff_oracle", "composition_scaling", "ball_condition", "growth"))
    out = Outcome()
    par = _check_params(cfg, "wolff_oracle")
    if par is not None:
        out.checks.append(wolff_oracle_check(par.get("rel_tol", 1e-6)))
    if any(k in (cfg.get("checks") or {}) for k in ("composition_scaling", "ball_condition", "growth")):
        dom = build_domain(_section(cfg, "domain"))
        spec = build_kernel(_section(cfg, "kernel"), dom.dim)
        tau = build_measure(dom, _section(cfg, "measure"))
        w = _section(cfg, "wolff", required=False) or {}
        q = _guard("wolff", lambda: WolffQuery(float(w.get("alpha", spec.s)), float(w.get("p", spec.p)),
                                               float(w.get("R", 2 * dom.diam))))
        _guard("wolff", lambda: q.validate(dom.dim))
        kappa = _guard("wolff.kappa", lambda: float(w["kappa"]))
        par = _check_params(cfg, "composition_scaling")
        if par is not None:
            out.checks.append(composition_scaling_check(tau, kappa, q, tuple(par.get("t", (0.5, 1.0, 2.0, 4.0))),
                                                        par.get("rel_tol", 0.01)))
        par = _check_params(cfg, "ball_condition")
        if par is not None:
            balls = [(b["center"], float(b["radius"])) for b in par["balls"]]
            bc = check_ball_condition(tau, kappa, q, balls, par.get("exponent", "kappa"))
            out.summary["ball_condition"] = {"max_ratio": bc.max_ratio, "ratios": bc.ratios, "exponent": bc.exponent}
        par = _check_params(cfg, "growth")
        if par is not None:
            gf = measure_growth_exponent(tau, kappa, spec, par["centers"])
            out.summary["growth"] = {"slopes": gf.slopes, "threshold": gf.threshold, "passed": gf.passed}
        out.tables["fields"] = _field_table(dom, {"wolff": wolff_field(tau, q)})
    return out


def run_capacity_suite(cfg, rng) -> Outcome:
    _known_checks(cfg, ("grid_oracle", "lattice", "trend"))
    cap = _section(cfg, "capacity")
    alpha = _guard("capacity.alpha", lambda: float(cap["alpha"]))
    beta = _guard("capacity.beta", lambda: float(cap["beta"]))
    _guard("capacity", lambda: CapacityProblem(alpha, beta, np.zeros((1, 2)), np.ones(1)))
    out = Outcome()
    out.summary["point_capacity_regime"] = point_capacity_regime(alpha, beta, 2)
    par = _check_params(cfg, "grid_oracle")
    if par is not None:
        out.checks.append(capacity_oracle_check(rng, alpha, beta, tuple(par.get("ambient", (1, 2, 3, 8))),
                                                par.get("per_size", 2), par.get("rel_tol", 1e-3)))
    par = _check_params(cfg, "lattice")
    if par is not None:
        out.checks.append(capacity_lattice_check(rng, alpha, beta, par.get("nodes", 8)))
    par = _check_params(cfg, "trend")
    if par is not None:
        rows = []
        for a, b in par.get("regimes", [[alpha, beta]]):
            c = capacity_trend_check(float(a), float(b), tuple(par.get("radii", (1e-1, 1e-2, 1e-3))))
            out.checks.append(c)
            for r, v in zip(c.details["radii"], c.details["capacities"]):
                rows.append([a, b, r, v])
        out.tables["trend"] = (["alpha", "beta", "radius", "capacity"], rows)
    return out


RUNNERS = {
    "linear-solve": run_linear_solve,
    "absorption": lambda cfg, rng: run_absorption_kind(cfg, rng, power=False),
    "power-absorption": lambda cfg, rng: run_absorption_kind(cfg, rng, power=True),
    "source-fixed-point": run_source_fixed_point,
    "source-monotone": run_source_monotone,
    "potential-suite": run_potential_suite,
    "capacity-suite": run_capacity_suite,
}


def run_experiment(cfg: dict, seed: Optional[int] = None) -> Outcome:
    """Validate the config, run it with a seeded generator, return the outcome."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    kind = cfg.get("kind")
    if kind not in RUNNERS:
        raise ConfigError("kind", f"must be one of {', '.join(KINDS)}; got {kind!r}")
    if seed is None:
        seed = cfg.get("seed", 0)
    if not (isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2 ** 64):
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    rng = np.random.default_rng(seed)
    out = RUNNERS[kind](cfg, rng)
    out.summary = {"kind": kind, "seed": seed, **out.summary,
                   "checks": [c.as_dict() for c in out.checks],
                   "passed": all(c.passed for c in out.checks)}
    return out
