"""Minimization of the discrete functional J and the procedures built on it.

J_h(v) = energy(v) + Σ G(v_i) w_i − Σ v_i μ_i over interior values v (the
collar stays at zero).  Its gradient is the discrete weak residual

    r_i = 2 Σ_j φ(v_i−v_j) k_ij + 2 φ(v_i) e_i + g(v_i) w_i − μ_i,

and a solve stops when max_i |r_i| ≤ tol.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import LinearOperator, cg

from .domain import DiscreteDomain, MeasureData, mollify
from .kernel import KernelTable, energy, phi, truncation_energy, weak_form
from .nonlinearity import Nonlinearity, tail_integral
from .norms import SeminormSpec, gagliardo_seminorm, weak_norm_star

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    field: np.ndarray
    iterations: int
    residual: float  # max-norm of the weak residual
    objective: float
    converged: bool
    message: str = ""
    diagnostics: dict = field(default_factory=dict)
    table: Optional[KernelTable] = field(default=None, repr=False)
    g: Optional[Nonlinearity] = field(default=None, repr=False)
    mu: Optional[MeasureData] = field(default=None, repr=False)

    @property
    def domain(self):
        return self.table.domain

    def summary(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual,
                "objective": self.objective, "converged": self.converged,
                "message": self.message, "diagnostics": self.diagnostics}


def objective(table, g, b, v):
    w = table.domain.weights
    return energy(table, v) + float((g.primitive(v) * w).sum()) - float(b @ v)


def residual(table, g, b, v):
    return weak_form(table, v) + g(v) * table.domain.weights - b


def _curvature(D, p, eps, delta):
    """Pair curvature: (p-1)|D|^{p-2} for p ≥ 2 and for large |D|; for p < 2 it
    moves to the majorizing weight |D|^{p-2} as |D| → 0, which removes the
    Newton overshoot at tied pairs."""
    a = (D * D + eps * eps) ** ((p - 2) / 2)
    if p >= 2:
        return (p - 1) * a
    return a * ((p - 1) + (2 - p) * np.exp(-np.abs(D) / delta))


def _snap_ties(v, rel=1e-12):
    """Replace clusters of values closer than rel·max|v| by their mean.

    For p < 2 the map t ↦ |t|^{p-1} is steep at 0, so pairs that are tied in
    exact arithmetic but differ by round-off leave a residual floor.
    """
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    if scale == 0.0:
        return v
    order = np.argsort(v, kind="stable")
    vs = v[order]
    cut = np.r_[True, np.diff(vs) > rel * scale]
    labels = np.cumsum(cut) - 1
    means = np.bincount(labels, vs) / np.bincount(labels)
    out = np.empty_like(v)
    out[order] = means[labels]
    return out


def _hessian(table, g, v, eps, delta=None):
    p = table.p
    w = table.domain.weights
    if p == 2:
        C = table.dense
        ext = 2.0 * table.s_ext
    else:
        delta = 1e3 * eps if delta is None else delta
        D = v[:, None] - v[None, :]
        C = _curvature(D, p, eps, delta) * table.dense
        ext = 2.0 * _curvature(v, p, eps, delta) * table.s_ext
    H = -2.0 * C
    H[np.diag_indices_from(H)] += 2.0 * C.sum(axis=1) + ext + g.derivative(v) * w
    return H


def _solve_spd(H, r):
    try:
        return sla.cho_solve(sla.cho_factor(H, check_finite=False), r, check_finite=False)
    except np.linalg.LinAlgError:
        shift = 1e-10 * float(np.abs(np.diag(H)).max())
        return sla.solve(H + shift * np.eye(len(H)), r, assume_a="sym")


def _linear_cg(table, g_slope, b, tol, maxiter):
    n = table.n
    w = table.domain.weights
    diag = 2.0 * (table.s_int + table.s_ext) + g_slope * w

    def mv(v):
        return weak_form(table, v) + g_slope * w * v

    A = LinearOperator((n, n), matvec=mv, dtype=float)
    M = LinearOperator((n, n), matvec=lambda r: r / diag, dtype=float)
    info_log = {"it": 0}

    def cb(_):
        info_log["it"] += 1

    v = np.zeros(n)
    for _ in range(5):
        v, info = cg(A, b, x0=v, rtol=0.0, atol=0.25 * tol, maxiter=maxiter, M=M, callback=cb)
        r = mv(v) - b
        if np.max(np.abs(r)) <= tol:
            break
    return v, info_log["it"]


def _linear_slope(g: Nonlinearity):
    if g.kind == "zero":
        return 0.0
    if g.kind == "power" and g.kappa == 1.0:
        return 1.0
    return None


def minimize_J(domain: DiscreteDomain, table: KernelTable, g: Nonlinearity, mu: MeasureData,
               tol: float = 1e-8, max_iter: int = 500, x0=None, diagnostics: bool = True,
               check_g: bool = True) -> SolveReport:
    """Minimize J_h; return the minimizer with its residual and diagnostics.

    Newton directions come from a regularized Hessian (|d|^{p-2} replaced by
    (d²+ε²)^{(p-2)/2}; for p < 2 the pair curvature blends into the majorizing
    weight near ties) and are globalized by Armijo backtracking on J, so every
    accepted step decreases J.  For p well below 1.5 on 2-D data with
    near-plateaus the residual can stall above ``tol``; the report then says
    ``converged=False``.  p=2 grids without a dense block are
    solved by preconditioned conjugate gradients (g zero or linear only).
    """
    if table.domain is not domain:
        raise ValueError("kernel table was assembled on a different domain")
    if mu.domain is not domain:
        raise ValueError("measure lives on a different domain")
    if check_g:
        g.check()
    n = domain.n_interior
    b = mu.node_masses
    p = table.p

    def finish(v, it, conv, msg):
        res = float(np.max(np.abs(residual(table, g, b, v)))) if n else 0.0
        rep = SolveReport(v, it, res, objective(table, g, b, v), conv, msg, {}, table, g, mu)
        if diagnostics:
            rep.diagnostics = diagnose(rep)
        return rep

    if not np.any(b):
        return finish(np.zeros(n), 0, True, "zero data")

    slope = _linear_slope(g)
    if table.dense is None:
        if p != 2 or slope is None:
            raise ValueError("large grids without a dense block support only p=2 with zero or linear g")
        v, it = _linear_cg(table, slope, b, tol, maxiter=20 * n)
        r = float(np.max(np.abs(residual(table, g, b, v))))
        return finish(v, it, r <= tol, "conjugate gradients")

    if x0 is not None:
        v = np.asarray(x0, float).copy()
    elif p == 2:
        v = np.zeros(n)
    else:
        v = _ray_start(table, g, b)

    J = objective(table, g, b, v)
    for it in range(1, max_iter + 1):
        r = residual(table, g, b, v)
        rmax = float(np.max(np.abs(r)))
        if p < 2:
            vs = _snap_ties(v)
            rs = residual(table, g, b, vs)
            if float(np.max(np.abs(rs))) < rmax:
                v, r, rmax = vs, rs, float(np.max(np.abs(rs)))
                J = objective(table, g, b, v)
        if rmax <= tol:
            return finish(v, it - 1, True, "converged")
        scale = max(float(np.max(np.abs(v))), 1e-300)
        eps = (1e-15 if p < 2 else 1e-8) * scale
        H = _hessian(table, g, v, eps, 1e-2 * scale)
        d = -_solve_spd(H, r)
        slope_dir = float(r @ d)
        if slope_dir >= 0:
            d = -r / np.maximum(np.diag(H), 1e-300)
            slope_dir = float(r @ d)
        t = 1.0
        accepted = False
        for _ in range(60):
            vt = v + t * d
            Jt = objective(table, g, b, vt)
            if Jt <= J + 1e-4 * t * slope_dir:
                accepted = True
                break
            # J differences lost in round-off: accept if the residual shrinks
            if abs(Jt - J) <= 1e-13 * (abs(J) + 1.0):
                if np.max(np.abs(residual(table, g, b, vt))) < rmax:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            return finish(v, it, False, "line search failed")
        v, J = vt, Jt
    return finish(v, max_iter, False, "iteration cap reached")


def _ray_start(table, g, b):
    """Minimize J along the ray through the p=2 solution of the same data."""
    K = table.dense
    A = -2.0 * K
    A[np.diag_indices_from(A)] += 2.0 * K.sum(axis=1) + 2.0 * table.s_ext
    d = _solve_spd(A, b)
    d /= max(float(np.max(np.abs(d))), 1e-300)

    def f(logt):
        return objective(table, g, b, math.exp(logt) * d)

    res = minimize_scalar(f, bounds=(-40.0, 40.0), method="bounded", options={"xatol": 1e-6})
    t = math.exp(res.x)
    return t * d if f(res.x) < objective(table, g, b, np.zeros_like(d)) else np.zeros_like(d)


def diagnose(rep: SolveReport, seminorms: Sequence[SeminormSpec] = (), levels=(1, 2, 4, 8)) -> dict:
    """Norm diagnostics recomputable from the field alone."""
    dom = rep.table.domain
    spec = rep.table.spec
    u = rep.field
    N, p = dom.dim, spec.p
    w = dom.weights
    out = {
        "g_l1": float((np.abs(rep.g(u)) * w).sum()) if rep.g is not None else 0.0,
        "weak_norm_u_p1": weak_norm_star(np.abs(u) ** (p - 1), N / (N - spec.sp), w),
        "total_variation": rep.mu.total_variation if rep.mu is not None else None,
    }
    if dom.n_interior <= 4096:
        out["truncation_energy"] = {str(k): truncation_energy(dom, u, k, spec) for k in levels}
    for sm in seminorms:
        out[f"seminorm_h{sm.h:g}_q{sm.q:g}"] = gagliardo_seminorm(dom, u, sm)
    return out


def solve_linear(domain, table, mu, tol=1e-8, **kw) -> SolveReport:
    return minimize_J(domain, table, Nonlinearity.zero(), mu, tol, **kw)


# ---------------------------------------------------------------------------


@dataclass
class SolaReport:
    final: SolveReport
    levels: list
    increments: list  # W^{h,q} quasi-norm of u_{n+1}-u_n
    decreasing: bool
    applied: list  # whether mollification was possible at each level


def solve_sola(domain, table, g, mu, n_max: int, seminorm: SeminormSpec, tol=1e-8) -> SolaReport:
    """Solve against mollify(μ, n) for n = 1..n_max and record Cauchy increments."""
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    prev = None
    incs, levels, applied = [], [], []
    rep = None
    for n in range(1, n_max + 1):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mu_n, ok = mollify(mu, n)
        rep = minimize_J(domain, table, g, mu_n, tol, diagnostics=False)
        if prev is not None:
            incs.append(gagliardo_seminorm(domain, rep.field - prev, seminorm))
        prev = rep.field
        levels.append(n)
        applied.append(ok)
    rep.diagnostics = diagnose(rep, [seminorm])
    tail3 = incs[-3:]
    decreasing = all(a > b or (a == 0 and b == 0) for a, b in zip(tail3[:-1], tail3[1:]))
    if not decreasing:
        log.warning("SOLA increments not decreasing over the last levels (grid too coarse?)")
    return SolaReport(rep, levels, incs, decreasing, applied)


def check_comparison(u: SolveReport, v: SolveReport, tol: float = 1e-8):
    """(u ≥ v − tol everywhere, max violation)."""
    if u.table.domain is not v.table.domain:
        raise ValueError("reports come from different domains")
    viol = float(np.max(np.maximum(v.field - u.field, 0.0))) if u.field.size else 0.0
    return viol <= tol, viol


def absorption_l1_bound(report: SolveReport, mu: Optional[MeasureData] = None, tol=None):
    """(Σ|g(u_i)| w_i ≤ |μ|(Ω) + tol, lhs, rhs).  The default slack is n·(solver residual)."""
    mu = report.mu if mu is None else mu
    w = report.table.domain.weights
    lhs = float((np.abs(report.g(report.field)) * w).sum())
    rhs = mu.total_variation
    if tol is None:
        tol = report.table.n * max(report.residual, 1e-15)
    return lhs <= rhs + tol, lhs, rhs


@dataclass
class TailSumBound:
    value: float
    near: float  # ∫_{Ω∖E_{s0}} g(|v|)
    tail: float  # ∫_{s0}^∞ s^{-q̃-1} g(s) ds
    tail_symmetric: float  # ∫_{s0}^∞ s^{-q̃-1} (g(s)-g(-s)) ds


def tail_sum_bound(g: Nonlinearity, q_tilde: float, C0: float, s0: float, v=None, weights=None) -> TailSumBound:
    """∫_{Ω∖E_{s0}} g(|v|) + q̃·C0·∫_{s0}^∞ s^{−q̃−1} g(s) ds.

    Raises ``ArithmeticError`` when the tail integral diverges (supercritical g).
    """
    if not q_tilde > 0 or s0 < 1:
        raise ValueError("need q_tilde > 0 and s0 >= 1")
    one = tail_integral(lambda t: max(float(g(np.array([t]))[0]), 0.0), q_tilde, s0)
    sym = tail_integral(lambda t: float(g(np.array([t]))[0] - g(np.array([-t]))[0]), q_tilde, s0)
    if not (one.converged and sym.converged):
        raise ArithmeticError(f"tail integral diverges (block ratio {sym.ratio:.6g}); g is supercritical for q̃={q_tilde:g}")
    near = 0.0
    if v is not None:
        v = np.abs(np.asarray(v, float))
        keep = v <= s0
        near = float((g(v[keep]) * np.asarray(weights, float)[keep]).sum())
    return TailSumBound(near + q_tilde * C0 * one.value, near, one.value, sym.value)
