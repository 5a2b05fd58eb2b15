"""Source problems Lv = g(v) + ρτ: ball constants, fixed-point orbit, monotone iteration."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .domain import DiscreteDomain, MeasureData
from .kernel import KernelTable
from .nonlinearity import Nonlinearity
from .norms import weak_norm_star, weak_norm_sup
from .potential import WolffQuery, check_wolff_composition, wolff_field
from .solver import SolveReport, minimize_J

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# linear solves and measured constants


class LinearSolver:
    """Cached Cholesky factor of the p=2 stiffness matrix: u = A⁻¹ b."""

    def __init__(self, table: KernelTable):
        if table.p != 2 or table.dense is None:
            raise ValueError("direct linear solves need p=2 and a dense block")
        K = table.dense
        A = -2.0 * K
        A[np.diag_indices_from(A)] += 2.0 * (K.sum(axis=1) + table.s_ext)
        self.table = table
        self.factor = sla.cho_factor(A, check_finite=False)

    def solve(self, b):
        return sla.cho_solve(self.factor, np.asarray(b, float), check_finite=False)

    def green(self) -> np.ndarray:
        """Columns are solutions for unit node masses."""
        return self.solve(np.eye(self.table.n))


def _solve_data(domain, table, b, solver: Optional[LinearSolver], tol):
    """Solve Lu = b (node masses) with the cached factor when available."""
    if solver is not None:
        return solver.solve(b)
    mu = MeasureData.from_density(domain, b / domain.weights)
    rep = minimize_J(domain, table, Nonlinearity.zero(), mu, tol, diagnostics=False)
    if not rep.converged:
        log.warning("inner solve stopped at residual %.3g", rep.residual)
    return rep.field


def _probe_nodes(n, max_probes):
    if max_probes is None or n <= max_probes:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_probes).round().astype(int))


def measure_linear_constant(domain: DiscreteDomain, table: KernelTable, max_probes=None, tol=1e-10):
    """max over unit node Diracs of weak_norm_sup(|u|^{p−1}, N/(N−sp)).

    For p = 2 the solution map is linear and the semi-norm is subadditive,
    so the value bounds ‖|u|^{p−1}‖ / |μ|(Ω) for every grid measure μ.
    For other p it is the worst ratio over the probe family.
    """
    N, p = domain.dim, table.p
    a = N / (N - table.spec.sp)
    w = domain.weights
    probes = _probe_nodes(domain.n_interior, max_probes)
    best = 0.0
    if p == 2 and table.dense is not None:
        G = LinearSolver(table).green()
        for j in probes:
            best = max(best, weak_norm_sup(np.abs(G[:, j]), a, w))
        return best
    for j in probes:
        mu = MeasureData(domain, {int(j): 1.0})
        u = minimize_J(domain, table, Nonlinearity.zero(), mu, tol, diagnostics=False).field
        best = max(best, weak_norm_sup(np.abs(u) ** (p - 1), a, w))
    return best


def layer_cake_bound(g: Nonlinearity, p: float, a: float, volume: float, lam: float) -> float:
    """Sup of ∫|g(|v|^{1/(p−1)} sign v)| over fields with ‖v‖*_{a} ≤ λ on a set of measure |Ω|.

    With h(t) = max(g(t^{1/(p−1)}), −g(−t^{1/(p−1)})) and t* = λ|Ω|^{−1/a}
    the bound is a·λ^a ∫_{t*}^∞ h(t) t^{−a−1} dt.
    """
    from .nonlinearity import tail_integral

    def h(t):
        r = np.array([t ** (1.0 / (p - 1))])
        return max(float(g(r)[0]), float(-g(-r)[0]), 0.0)

    if lam <= 0:
        return 0.0
    ts = lam * volume ** (-1.0 / a)
    ti = tail_integral(h, a, ts)
    if not ti.converged:
        return math.inf
    return a * lam ** a * ti.value


def measure_ball_constant(domain, table, g: Nonlinearity, kappa: float, C_lin: Optional[float] = None,
                          t_range=(1e-6, 1e6), n_t: int = 241, max_probes=None) -> dict:
    """Constant C with ‖𝕊(v)‖* ≤ C(t^a + t^κ + ρ) whenever ‖v‖* ≤ t and |τ|(Ω) ≤ 1.

    C = C_lin · max(1, sup_t B(t)/(t^a + t^κ)) with B the layer-cake bound,
    the sup taken on a log-spaced t grid.
    """
    N, p = domain.dim, table.p
    a = N / (N - table.spec.sp)
    if C_lin is None:
        C_lin = measure_linear_constant(domain, table, max_probes)
    ts = np.geomspace(*t_range, n_t)
    vol = domain.volume
    ratios = [layer_cake_bound(g, p, a, vol, t) / (t ** a + t ** kappa) for t in ts]
    sup = max(ratios)
    return {"C": C_lin * max(1.0, sup), "C_lin": C_lin, "layer_cake_sup": sup, "a": a}


# ---------------------------------------------------------------------------
# ball constants


@dataclass(frozen=True)
class BallConstants:
    t0: float
    rho0: float
    C: float
    a: float
    kappa: float

    def holds(self, rho=None) -> bool:
        rho = self.rho0 if rho is None else rho
        return self.C * (self.t0 ** self.a + self.t0 ** self.kappa + rho) <= self.t0


def _nudge(C, a, kappa, t0, rho):
    """Largest float ρ ≤ rho with C(t0^a + t0^κ + ρ) ≤ t0 in floating point."""
    for _ in range(10000):
        if C * (t0 ** a + t0 ** kappa + rho) <= t0:
            return rho
        rho = np.nextafter(rho, -np.inf)
    raise ArithmeticError("could not certify the ball inequality")


def solve_ball_constants(C: float, a: float, kappa: float, t: Optional[float] = None,
                         t_range=(1e-3, 1e3), n_t: int = 4001) -> BallConstants:
    """(t₀, ρ₀) with C(t₀^a + t₀^κ + ρ) ≤ t₀ for all 0 ≤ ρ ≤ ρ₀.

    On a log scan of t the feasible points satisfy C(t^a + t^κ) < t; the
    one maximizing ρ₀(t) = (t − Ct^a − Ct^κ)/C is returned.  Passing ``t``
    evaluates ρ₀ at that radius instead.  ρ₀ is lowered by ulps until the
    inequality holds exactly in floating point.  For a, κ > 1 some small t is
    always feasible, so infeasibility is relative to ``t_range``.
    """
    if not (C > 0 and a > 1 and kappa > 1):
        raise ValueError("need C > 0, a > 1, kappa > 1")
    if t is not None:
        ts = np.array([float(t)])
    else:
        ts = np.geomspace(*t_range, n_t)
    rho = (ts - C * ts ** a - C * ts ** kappa) / C
    if not np.any(rho > 0):
        raise ArithmeticError("no feasible radius: C(t^a + t^κ) ≥ t on the whole scan")
    k = int(np.argmax(rho))
    t0 = float(ts[k])
    r0 = _nudge(C, a, kappa, t0, float(rho[k]))
    if r0 <= 0:
        raise ArithmeticError("no feasible radius after rounding")
    return BallConstants(t0, r0, C, a, kappa)


# ---------------------------------------------------------------------------
# fixed-point orbit


@dataclass
class FixedPointConfig:
    rho: float
    t0: float
    C: float
    a: float
    kappa: float
    max_iter: int = 200
    tol: Optional[float] = None  # L¹ increment; default 1e-6·|Ω|
    solve_tol: float = 1e-10


@dataclass
class FixedPointResult:
    report: Optional[SolveReport]
    field: np.ndarray = dc_field(repr=False)  # u = |v|^{1/(p-1)} sign v
    v: np.ndarray = dc_field(repr=False)
    orbit: list = dc_field(default_factory=list)  # per step: norm in, norm out, L¹ increment
    converged: bool = False
    escaped: bool = False
    ball_invariance: bool = True  # ‖v‖ ≤ t0 ⇒ ‖𝕊(v)‖ ≤ t0 on every step
    fixed_point_residual: float = float("nan")
    message: str = ""


def _signed_power(x, e):
    return np.sign(x) * np.abs(x) ** e


def fixed_point_iterate(domain: DiscreteDomain, table: KernelTable, g: Nonlinearity, tau: MeasureData,
                        config: FixedPointConfig) -> FixedPointResult:
    """Iterate v ↦ 𝕊(v) = |w|^{p−1} sign w with Lw = g(|v|^{1/(p−1)} sign v) + ρτ from v = 0."""
    if tau.total_variation > 1 + 1e-12:
        raise ValueError("need |τ|(Ω) ≤ 1")
    p = table.p
    N = domain.dim
    a = N / (N - table.spec.sp)
    w = domain.weights
    tol = 1e-6 * domain.volume if config.tol is None else config.tol
    solver = LinearSolver(table) if (p == 2 and table.dense is not None) else None
    base = config.rho * tau.node_masses
    v = np.zeros(domain.n_interior)
    res = FixedPointResult(None, v.copy(), v.copy())
    if not np.any(base):
        res.converged, res.fixed_point_residual, res.message = True, 0.0, "zero data"
        return res
    for step in range(1, config.max_iter + 1):
        u_in = _signed_power(v, 1.0 / (p - 1))
        b = g(u_in) * w + base
        wsol = _solve_data(domain, table, b, solver, config.solve_tol)
        v_new = _signed_power(wsol, p - 1)
        n_in = weak_norm_star(v, a, w)
        n_out = weak_norm_star(v_new, a, w)
        inc = float((np.abs(v_new - v) * w).sum())
        res.orbit.append({"step": step, "norm_in": n_in, "norm_out": n_out, "l1_increment": inc})
        if n_in <= config.t0 and n_out > config.t0:
            res.ball_invariance = False
        v = v_new
        if not np.all(np.isfinite(v)) or n_out > config.t0:
            res.escaped = True
            res.message = f"orbit left the ball at step {step} (norm {n_out:.6g} > t0 {config.t0:.6g})"
            break
        if inc < tol:
            res.converged = True
            res.message = f"converged after {step} steps"
            break
    else:
        res.message = "iteration cap reached"
    res.v = v
    res.field = _signed_power(v, 1.0 / (p - 1))
    if res.converged:
        b = g(res.field) * w + base
        Sv = _signed_power(_solve_data(domain, table, b, solver, config.solve_tol), p - 1)
        res.fixed_point_residual = float((np.abs(v - Sv) * w).sum())
    return res


# ---------------------------------------------------------------------------
# monotone iteration


def measure_wolff_constant(domain: DiscreteDomain, table: KernelTable, q: WolffQuery, max_probes=None,
                           tol=1e-10) -> float:
    """C with u_ν ≤ C·W[ν] nodewise, measured on unit cell-mass probes.

    For p = 2 both u and W are linear in ν ≥ 0 (W is linear at p = 2), so
    the max over single-cell probes bounds every nonnegative grid measure.
    """
    p = table.p
    n = domain.n_interior
    w = domain.weights
    probes = _probe_nodes(n, max_probes)
    best = 0.0
    G = LinearSolver(table).green() if (p == 2 and table.dense is not None) else None
    for j in probes:
        dens = np.zeros(n)
        dens[j] = 1.0 / w[j]
        nu = MeasureData.from_density(domain, dens)
        W = wolff_field(nu, q)
        if G is not None:
            u = G[:, j]
        else:
            u = minimize_J(domain, table, Nonlinearity.zero(), nu, tol, diagnostics=False).field
        best = max(best, float(np.max(u / W)))
    return best


@dataclass
class MonotoneResult:
    field: np.ndarray = dc_field(repr=False)
    iterates: int = 0
    log: list = dc_field(default_factory=list)  # per step: min increment, L¹ increment, rel change, barrier slack
    status: str = ""  # "stabilized", "cap", "monotonicity_violation", "barrier_exceeded"
    A: float = 0.0
    C: float = 0.0
    M: float = 0.0
    admissible: bool = False  # (AC)^{κ/(p−1)} M ρ^{(κ−p+1)/(p−1)²} + 1 < 2
    admissibility_lhs: float = 0.0
    stabilized_1pct_at: Optional[int] = None
    min_increment: float = float("inf")
    barrier_ok: bool = True
    sandwich_upper: Optional[float] = None  # max u / W[ρτ]
    sandwich_lower: Optional[float] = None  # max W^{d/8}[μ] / u
    barrier: np.ndarray = dc_field(default=None, repr=False)


def monotone_source_iterate(domain: DiscreteDomain, table: KernelTable, kappa: float, tau: MeasureData,
                            rho: float, q: WolffQuery, M: Optional[float] = None, C: Optional[float] = None,
                            max_iter: int = 50, mono_tol: float = 1e-12, solve_tol: float = 1e-10,
                            max_probes=None) -> MonotoneResult:
    """u₀ solves Lu₀ = ρτ; u_n solves Lu_n = u_{n−1}^κ + ρτ.

    Checks u_{n} ≥ u_{n−1} − mono_tol and u_n ≤ A·C·W[ρτ] with
    A = 2^{1/(p−1)+1} at every step and aborts on the first violation.
    """
    if not tau.is_nonnegative():
        raise ValueError("τ must be nonnegative")
    p = table.p
    if not kappa > p - 1:
        raise ValueError("need kappa > p-1")
    n = domain.n_interior
    w = domain.weights
    A = 2.0 ** (1.0 / (p - 1) + 1.0)
    out = MonotoneResult(np.zeros(n), A=A)
    if tau.is_zero() or rho == 0:
        out.status = "stabilized"
        out.stabilized_1pct_at = 0
        out.admissible = True
        return out
    if C is None:
        C = measure_wolff_constant(domain, table, q, max_probes)
    if M is None:
        M = check_wolff_composition(tau, kappa, q).ratio
    out.C, out.M = C, M
    lhs = (A * C) ** (kappa / (p - 1)) * M * rho ** ((kappa - p + 1) / (p - 1) ** 2) + 1.0
    out.admissibility_lhs = float(lhs)
    out.admissible = bool(lhs < 2.0)
    Wrt = wolff_field(tau.scaled(rho), q)
    barrier = A * C * Wrt
    out.barrier = barrier
    solver = LinearSolver(table) if (p == 2 and table.dense is not None) else None
    base = rho * tau.node_masses
    u = _solve_data(domain, table, base, solver, solve_tol)
    out.status = "cap"
    for step in range(0, max_iter + 1):
        slack = float(np.min(barrier - u))
        if slack < 0:
            out.barrier_ok = False
            out.status = "barrier_exceeded"
            out.log.append({"step": step, "barrier_slack": slack})
            break
        if step == max_iter:
            break
        u_next = _solve_data(domain, table, np.maximum(u, 0.0) ** kappa * w + base, solver, solve_tol)
        dmin = float(np.min(u_next - u))
        l1 = float((np.abs(u_next - u) * w).sum())
        rel = l1 / max(float((np.abs(u_next) * w).sum()), 1e-300)
        out.min_increment = min(out.min_increment, dmin)
        out.log.append({"step": step + 1, "min_increment": dmin, "l1_increment": l1,
                        "rel_change": rel, "barrier_slack": slack})
        if dmin < -mono_tol:
            out.status = "monotonicity_violation"
            u = u_next
            break
        u = u_next
        if out.stabilized_1pct_at is None and rel < 0.01:
            out.stabilized_1pct_at = step + 1
        if l1 < 1e-6 * domain.volume:
            out.status = "stabilized"
            # the barrier is checked once more on the final iterate
            if float(np.min(barrier - u)) < 0:
                out.barrier_ok = False
                out.status = "barrier_exceeded"
            break
    out.field = u
    out.iterates = len([e for e in out.log if "min_increment" in e])
    if out.status == "stabilized":
        fin = np.isfinite(Wrt) & (Wrt > 0)
        out.sandwich_upper = float(np.max(u[fin] / Wrt[fin]))
        dens = np.maximum(u, 0.0) ** kappa
        mu = MeasureData.from_density(domain, dens) + tau.scaled(rho)
        radii = domain.boundary_distance() / 8.0
        Wlow = wolff_field(mu, q, radii=radii)
        pos = (u > 0) & np.isfinite(Wlow)
        out.sandwich_lower = float(np.max(Wlow[pos] / u[pos])) if pos.any() else None
    return out
