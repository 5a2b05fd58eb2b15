"""Absorption problems Lu + g(u) = μ: subcritical test, runs, sandwich fits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .capacity import point_capacity_regime
from .domain import DiscreteDomain, MeasureData, domain_from_descriptor
from .kernel import KernelSpec, assemble_kernel
from .nonlinearity import Nonlinearity, tail_integral
from .norms import SeminormSpec, gagliardo_seminorm
from .potential import WolffQuery, wolff_field
from .solver import SolveReport, absorption_l1_bound, minimize_J

log = logging.getLogger(__name__)


def critical_exponent(N, s, p):
    """N(p−1)/(N−sp)."""
    return N * (p - 1) / (N - s * p)


@dataclass
class SubcriticalVerdict:
    verdict: str  # "subcritical" or "supercritical"
    lambda_g: float  # ∫_1^∞ (g(t)−g(−t)) t^{−q−1} dt, inf when divergent
    threshold: float  # N(p−1)/(N−sp)
    block_ratio: float
    # the alternative threshold N(p−1)/(N−s) quoted for power nonlinearities;
    # True when that reading disagrees with the integral for this g
    alt_threshold: float = float("nan")
    alt_disagrees: bool = False


def subcritical_check(g: Nonlinearity, N: int, s: float, p: float) -> SubcriticalVerdict:
    """Decide convergence of ∫_1^∞ (g(t)−g(−t)) t^{−N(p−1)/(N−sp)−1} dt."""
    if not (0 < s < 1 and 1 < p < N / s):
        raise ValueError("need 0 < s < 1 and 1 < p < N/s")
    q = critical_exponent(N, s, p)

    def f(t):
        a = np.array([t])
        return max(float(g(a)[0] - g(-a)[0]), 0.0)

    ti = tail_integral(f, q, 1.0)
    verdict = "subcritical" if ti.converged else "supercritical"
    alt = N * (p - 1) / (N - s)
    dis = False
    if g.kind == "power":
        dis = (g.kappa < alt) != ti.converged
    return SubcriticalVerdict(verdict, ti.value, q, ti.ratio, alt, dis)


def radial_slope(domain: DiscreteDomain, u, center, r_min: float, r_max: float, n_bins: int = 24):
    """Slope of log u against log r with equal weight per log-radius bin.

    Nodes with r in [r_min, r_max] and u > 0 are grouped into ``n_bins``
    log-spaced shells; the fit uses the shell means of (log r, log u).
    """
    u = np.asarray(u, float)
    r = np.linalg.norm(domain.points_for(u) - np.asarray(center, float), axis=1)
    keep = (r >= r_min) & (r <= r_max) & (u > 0)
    if keep.sum() < 4:
        raise ValueError("fewer than 4 usable nodes in the annulus")
    lr, lu = np.log(r[keep]), np.log(u[keep])
    edges = np.linspace(np.log(r_min), np.log(r_max), n_bins + 1)
    b = np.clip(np.searchsorted(edges, lr, side="right") - 1, 0, n_bins - 1)
    cnt = np.bincount(b, minlength=n_bins)
    ok = cnt > 0
    mr = np.bincount(b, lr, n_bins)[ok] / cnt[ok]
    mu = np.bincount(b, lu, n_bins)[ok] / cnt[ok]
    if ok.sum() < 3:
        raise ValueError("annulus too thin for a slope fit")
    return float(np.polyfit(mr, mu, 1)[0])


def sandwich_constants(u, w_plus, w_minus):
    """Smallest c₊, c₋ with −c₋·W₋ ≤ u ≤ c₊·W₊ at nodes where the bound is finite.

    Returns ``(c_plus, c_minus)``; a side with no nodes of that sign is None.
    Nodes where W is infinite (atoms) impose no constraint.  A node with
    u > 0 but W₊ = 0 gives c₊ = inf.
    """
    u = np.asarray(u, float)

    def fit(vals, W):
        if vals.size == 0:
            return None
        fin = np.isfinite(W)
        vals, W = vals[fin], W[fin]
        if vals.size == 0:
            return 0.0
        if np.any(W <= 0):
            return float("inf")
        return float(np.max(vals / W))

    pos = u > 0
    neg = u < 0
    cp = fit(u[pos], w_plus[pos]) if pos.any() else None
    cm = fit(-u[neg], w_minus[neg]) if neg.any() else None
    return cp, cm


@dataclass
class AbsorptionRun:
    """Inputs and outputs of one absorption experiment."""

    domain: DiscreteDomain
    spec: KernelSpec
    g: Nonlinearity
    mu: MeasureData
    tol: float = 1e-8
    seminorm: Optional[SeminormSpec] = None
    truncation_levels: Sequence[float] = tuple(2.0 ** k for k in range(0, 21))
    # outputs
    report: Optional[SolveReport] = None
    verdict: Optional[SubcriticalVerdict] = None
    wolff_plus: Optional[np.ndarray] = field(default=None, repr=False)
    wolff_minus: Optional[np.ndarray] = field(default=None, repr=False)
    c_plus: Optional[float] = None
    c_minus: Optional[float] = None
    results: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)


def _truncated_scheme(run: AbsorptionRun, table):
    """Solve with T_n∘g for increasing n until the truncation is inactive.

    Once n exceeds max|g(u_n)| the truncated minimizer is the minimizer for
    g itself; the level where successive fields first agree within 1% is
    also recorded (or the first inactive level, if earlier).
    """
    prev = None
    history = []
    rep = None
    stabilized_at = None
    for n in run.truncation_levels:
        gn = run.g.truncated(n)
        rep = minimize_J(run.domain, table, gn, run.mu, run.tol, diagnostics=False, check_g=False,
                         x0=None if prev is None else prev)
        u = rep.field
        gmax = float(np.max(np.abs(run.g(u)))) if u.size else 0.0
        change = None
        if prev is not None:
            scale = max(float(np.max(np.abs(u))), 1e-300)
            change = float(np.max(np.abs(u - prev))) / scale
            if stabilized_at is None and change < 0.01:
                stabilized_at = n
        history.append({"level": n, "max_g": gmax, "rel_change": change, "converged": rep.converged})
        prev = u
        if gmax < n:
            if stabilized_at is None:
                stabilized_at = n
            break
    final = minimize_J(run.domain, table, run.g, run.mu, run.tol, x0=prev, check_g=False)
    return final, history, stabilized_at


def run_absorption(run: AbsorptionRun) -> AbsorptionRun:
    """Solve, then fill in the sandwich constants, L¹ bound and a priori quantities."""
    dom, spec = run.domain, run.spec
    N, s, p = dom.dim, spec.s, spec.p
    run.g.check()
    run.verdict = subcritical_check(run.g, N, s, p)
    table = assemble_kernel(dom, spec)
    if run.g.is_unbounded() and not run.mu.is_zero():
        rep, hist, stab = _truncated_scheme(run, table)
        run.results["truncation"] = {"history": hist, "stabilized_at": stab}
    else:
        rep = minimize_J(dom, table, run.g, run.mu, run.tol, check_g=False)
    run.report = rep
    u = rep.field
    q = WolffQuery.for_domain(dom, s, p)
    mu_p, mu_m = run.mu.positive(), run.mu.negative()
    run.wolff_plus = wolff_field(mu_p, q)
    run.wolff_minus = wolff_field(mu_m, q)
    run.c_plus, run.c_minus = sandwich_constants(u, run.wolff_plus, run.wolff_minus)
    tv = run.mu.total_variation
    ok_l1, lhs, rhs = absorption_l1_bound(rep)
    run.results.update({
        "g_l1": lhs, "total_variation": tv,
        "g_l1_root": lhs ** (1 / (p - 1)), "tv_root": tv ** (1 / (p - 1)),
    })
    if run.seminorm is not None:
        sm = gagliardo_seminorm(dom, u, run.seminorm, s, p)
        run.results["seminorm"] = sm
        run.results["seminorm_ratio"] = sm / tv ** (1 / (p - 1)) if tv > 0 else 0.0
    run.checks["converged"] = bool(rep.converged)
    run.checks["l1_bound"] = bool(ok_l1)
    if run.mu.is_nonnegative():
        run.checks["nonnegative"] = bool(np.all(u >= -run.tol))
    run.checks["sandwich_finite"] = all(c is None or np.isfinite(c) for c in (run.c_plus, run.c_minus))
    return run


def refine_measure(mu: MeasureData, domain: DiscreteDomain) -> MeasureData:
    """Carry an atomic measure to another grid by its atom positions."""
    if np.any(mu.density):
        raise ValueError("only atomic measures are carried between grids")
    out = MeasureData.zero(domain)
    for i, m in mu.atoms.items():
        out = out + MeasureData.dirac(domain, mu.domain.interior_points[i], m)
    return out


def refinement_signature(run: AbsorptionRun, level: float, refinements: int = 3,
                         ratio_threshold: float = 0.97) -> dict:
    """∫|u|^κ under grid refinement at a fixed truncation level.

    The increments between successive grids shrink geometrically when the
    limit exists.  A ratio of successive increments ≥ ``ratio_threshold``
    at the finest pair is reported as divergence.
    """
    kappa = run.g.kappa
    desc = run.domain.descriptor()
    vals, hs = [], []
    for k in range(refinements + 1):
        d = dict(desc)
        d["spacing"] = desc["spacing"] / 2 ** k
        dom = domain_from_descriptor(d)
        mu = refine_measure(run.mu, dom)
        table = assemble_kernel(dom, run.spec)
        rep = minimize_J(dom, table, run.g.truncated(level), mu, run.tol, diagnostics=False,
                         check_g=False)
        vals.append(float((np.abs(rep.field) ** kappa * dom.weights).sum()))
        hs.append(dom.h)
    inc = np.diff(vals)
    ratios = [float(inc[i + 1] / inc[i]) if inc[i] != 0 else float("inf") for i in range(len(inc) - 1)]
    divergent = bool(ratios and ratios[-1] >= ratio_threshold and inc[-1] > 0)
    return {"level": level, "spacings": hs, "integrals": vals, "increment_ratios": ratios,
            "divergent": divergent}


def run_power_absorption(run: AbsorptionRun, refinements: int = 3, signature_level: float = 1.0) -> AbsorptionRun:
    """run_absorption for g = |t|^{κ−1}t plus ∫|u|^κ and the non-existence signature."""
    g = run.g
    if g.kind != "power":
        raise ValueError("power absorption needs a power nonlinearity")
    p = run.spec.p
    if not g.kappa > p - 1:
        raise ValueError("need kappa > p-1")
    run_absorption(run)
    N, s = run.domain.dim, run.spec.s
    u = run.report.field
    run.results["u_kappa_l1"] = float((np.abs(u) ** g.kappa * run.domain.weights).sum())
    regime = point_capacity_regime(s * p, g.kappa / (g.kappa - p + 1), N)
    run.results["point_capacity_regime"] = regime
    atomic = bool(run.mu.atoms) and not np.any(run.mu.density)
    super_ = g.kappa >= critical_exponent(N, s, p)
    run.results["admissible"] = (not run.mu.atoms) or regime == "positive"
    if atomic:
        sig = refinement_signature(run, signature_level, refinements)
        run.results["refinement_signature"] = sig
        if super_ and regime == "null":
            run.checks["nonexistence_signature"] = sig["divergent"]
        else:
            run.checks["refinement_stable"] = not sig["divergent"]
    return run
