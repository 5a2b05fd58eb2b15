"""Bessel kernel G_α and the discrete Bessel capacity Cap_{α,β}."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.special import gamma as Gamma

from .domain import sphere_area, unit_ball_volume


def bessel_kernel(alpha: float, r, N: int = 2, n_points: int = 200):
    """G_α(r) by the subordination integral, trapezoid rule in u = ln t.

    G_α(r) = (4π)^{-N/2}/Γ(α/2) ∫_0^∞ t^{(α−N)/2−1} exp(−r²/(4t) − t) dt,
    integrated over u ∈ [ln(r²/4) − ln 60, ln 60] where both exponential
    factors are below e^{-60} at the ends.
    """
    if not 0 < alpha < N:
        raise ValueError(f"alpha must lie in (0, N) = (0, {N})")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("G_α is singular at r = 0")
    nu = 0.5 * (alpha - N)
    flat = r.reshape(-1)
    lo = np.log(flat * flat / 4.0) - math.log(60.0)
    hi = np.full_like(flat, math.log(60.0))
    lo = np.minimum(lo, hi - 1.0)
    s = np.linspace(0.0, 1.0, n_points)
    u = lo[:, None] + (hi - lo)[:, None] * s[None, :]
    t = np.exp(u)
    f = np.exp(nu * u - flat[:, None] ** 2 / (4.0 * t) - t)
    val = np.trapezoid(f, u, axis=1) if hasattr(np, "trapezoid") else np.trapz(f, u, axis=1)
    out = val * (4 * math.pi) ** (-N / 2) / Gamma(alpha / 2)
    return out.reshape(r.shape) if r.ndim else float(out[0])


def bessel_ball_integral(alpha: float, rho: float, N: int = 2) -> float:
    """∫_{B_ρ(0)} G_α(|y|) dy."""
    val, _ = quad(lambda r: float(bessel_kernel(alpha, r, N)) * r ** (N - 1), 0.0, rho,
                  epsabs=0.0, epsrel=1e-10, limit=200)
    return sphere_area(N) * val


@dataclass
class CapacityProblem:
    """Discrete Cap_{α,β}(E) on an ambient node set.

    ``points``/``weights`` describe the ambient grid (it may extend beyond Ω);
    ``target`` lists the node indices forming E.
    """

    alpha: float
    beta: float
    points: np.ndarray
    weights: np.ndarray
    target: Sequence[int] = ()
    _cols: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))
        self.weights = np.asarray(self.weights, float).reshape(-1)
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points and weights differ in length")
        self.target = tuple(sorted(set(int(i) for i in self.target)))
        self.validate()

    @property
    def dim(self):
        return self.points.shape[1]

    def validate(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if any(not 0 <= i < len(self.weights) for i in self.target):
            raise ValueError("target index outside the ambient grid")

    def with_target(self, target) -> "CapacityProblem":
        """Same grid, new target set; shares the kernel row cache."""
        return CapacityProblem(self.alpha, self.beta, self.points, self.weights, target, self._cols)

    def rows(self, idx) -> np.ndarray:
        """A_ij = G_α(x_i, x_j) w_j for i in idx; the self entry is the cell average."""
        need = [i for i in idx if i not in self._cols]
        if need:
            N = self.dim
            d = cdist(self.points[need], self.points)
            d[np.arange(len(need)), need] = 1.0
            G = bessel_kernel(self.alpha, d, N) * self.weights[None, :]
            for k, i in enumerate(need):
                rho = (self.weights[i] / unit_ball_volume(N)) ** (1.0 / N)
                G[k, i] = bessel_ball_integral(self.alpha, rho, N)
                self._cols[i] = G[k]
        return np.array([self._cols[i] for i in idx]).reshape(len(idx), -1)


@dataclass
class CapacityResult:
    value: float  # objective of a feasible g (upper bound)
    lower: float  # dual value (lower bound)
    g: np.ndarray = field(repr=False)
    multipliers: np.ndarray = field(repr=False)
    iterations: int = 0

    @property
    def gap(self):
        return (self.value - self.lower) / self.value if self.value > 0 else 0.0


def capacity(problem: CapacityProblem, tol: float = 1e-4, max_iter: int = 5000) -> CapacityResult:
    """inf Σ g_j^β w_j over g ≥ 0 with Σ_j G_α(x_i,x_j) g_j w_j ≥ 1 on E.

    Solved through the concave dual over multipliers λ ≥ 0,
    D(λ) = Σλ − (1−1/β) Σ_j c_j g_j with c = Aᵀλ and g_j = (c_j/(βw_j))^{1/(β−1)},
    by L-BFGS-B.  The dual g is rescaled to be feasible, giving the returned
    value; the dual value certifies ``(value − lower)/value ≤ tol``.
    """
    E = list(problem.target)
    if not E:
        return CapacityResult(0.0, 0.0, np.zeros(len(problem.weights)), np.zeros(0), 0)
    A = problem.rows(E)
    if np.any(A.max(axis=1) <= 1e-300):
        raise ValueError("kernel rows vanish: discretization cannot satisfy the constraints")
    beta = problem.beta
    w = problem.weights
    ex = 1.0 / (beta - 1.0)

    def g_of(c):
        return (np.maximum(c, 0.0) / (beta * w)) ** ex

    # best uniform multiplier: D(t·1) = t|E| − k t^{β/(β-1)} maximized in closed form
    c1 = A.sum(axis=0)
    k = (1 - 1 / beta) * float((c1 * g_of(c1)).sum())
    t0 = (len(E) * (beta - 1) / (beta * k)) ** (beta - 1)
    scale = t0

    def negdual(z):
        lam = z * scale
        c = A.T @ lam
        g = g_of(c)
        D = lam.sum() - (1 - 1 / beta) * float(c @ g)
        grad = 1.0 - A @ g
        return -D, -grad * scale

    z = np.ones(len(E))
    best = None
    it_total = 0
    ftol = 1e-15
    for _ in range(20):
        res = minimize(negdual, z, jac=True, method="L-BFGS-B", bounds=[(0, None)] * len(E),
                       options={"maxiter": max_iter, "ftol": ftol, "gtol": 1e-14, "maxcor": 30})
        it_total += int(res.nit)
        z = res.x
        lam = z * scale
        g = g_of(A.T @ lam)
        lower = -float(res.fun)
        slack = A @ g
        if np.min(slack) <= 0:
            g = g_of(A.T @ np.ones(len(E)))
            slack = A @ g
        gf = g / min(1.0, float(np.min(slack)))
        upper = float((gf ** beta * w).sum())
        # weak duality: a dual value above a feasible primal value is rounding
        lower = min(lower, upper)
        best = CapacityResult(upper, lower, gf, lam, it_total)
        if best.gap <= tol or res.nit == 0:
            break
    return best


def point_capacity_regime(alpha: float, beta: float, N: int) -> str:
    """``"positive"`` iff αβ > N (points carry capacity), else ``"null"``."""
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    return "positive" if alpha * beta > N else "null"


def graded_polar_grid(r: float, n_in: int = 6, n_out: int = 40, n_theta: int = 24,
                      r_out: float = 12.0):
    """2-D annular cells: ``n_in`` uniform rings inside B_r, ``n_out`` geometric rings to ``r_out``.

    Returns (points, weights, target) with ``target`` the nodes inside B_r.
    The inner pattern scales with r, so balls of different radii are
    resolved alike.
    """
    inner = np.linspace(0.0, r, n_in + 1)
    outer = np.geomspace(r, r_out, n_out + 1)
    edges = np.concatenate([inner, outer[1:]])
    pts, wts, tgt = [], [], []
    dth = 2 * math.pi / n_theta
    for k in range(len(edges) - 1):
        a, b = edges[k], edges[k + 1]
        area = 0.5 * (b * b - a * a) * dth
        rad = (2.0 / 3.0) * (b ** 3 - a ** 3) / (b * b - a * a)  # area centroid radius
        for m in range(n_theta):
            th = (m + 0.5 * (k % 2)) * dth
            c = math.sin(dth / 2) / (dth / 2)
            pts.append((rad * c * math.cos(th), rad * c * math.sin(th)))
            wts.append(area)
            if k < n_in:
                tgt.append(len(pts) - 1)
    return np.array(pts), np.array(wts), tgt


@dataclass
class RegimeTrend:
    radii: list
    capacities: list
    decade_factors: list  # Cap(B_r)/Cap(B_{r/10}) for successive radii
    verdict: str  # "positive", "null" or "indeterminate"
    expected: str


def capacity_trend(alpha: float, beta: float, radii=(1e-1, 1e-2, 1e-3), tol: float = 1e-4,
                   **grid) -> RegimeTrend:
    """Cap_{α,β}(B_r(0)) in R² on shrinking r; compare with :func:`point_capacity_regime`.

    The verdict is ``"null"`` when every decade factor is ≥ 10 and
    ``"positive"`` when the last one is ≤ 2 (capacity levelling off).
    """
    radii = sorted(radii, reverse=True)
    caps = []
    for r in radii:
        pts, wts, tgt = graded_polar_grid(r, **grid)
        caps.append(capacity(CapacityProblem(alpha, beta, pts, wts, tgt), tol).value)
    fac = [caps[i] / caps[i + 1] for i in range(len(caps) - 1)]
    per_decade = [f ** (1.0 / math.log10(radii[i] / radii[i + 1])) for i, f in enumerate(fac)]
    if all(f >= 10 for f in per_decade):
        verdict = "null"
    elif per_decade[-1] <= 2:
        verdict = "positive"
    else:
        verdict = "indeterminate"
    return RegimeTrend(list(radii), caps, per_decade, verdict, point_capacity_regime(alpha, beta, 2))


def _zoom_search(f, lo, hi, n: int, rounds: int, maximize: bool):
    """Exhaustive search of f on an n^k grid, moved and refined round by round.

    ``f`` maps a (m, k) array of points to m values (inf/−inf marks
    infeasible points); coordinates stay ≥ 0.  The box is re-centred on the
    best point each round: doubled when that point lies on an upper face,
    kept when it lies on a lower face above 0, halved otherwise.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    k = lo.size
    best_x, best_f = None, None
    sign = -1.0 if maximize else 1.0
    for _ in range(rounds):
        axes = [np.linspace(lo[i], hi[i], n) for i in range(k)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        vals = sign * f(X)
        j = int(np.argmin(vals))
        if not np.isfinite(vals[j]):
            hi = hi * 2.0
            continue
        if best_f is None or vals[j] <= best_f:
            best_x, best_f = X[j], vals[j]
        half = 0.5 * (hi - lo)
        step = (hi - lo) / (n - 1)
        top = np.any(np.isclose(best_x, hi, rtol=0, atol=0.5 * step))
        bottom = np.any(np.isclose(best_x, lo, rtol=0, atol=0.5 * step) & (lo > 0))
        if top:
            half = 2.0 * half
        elif not bottom:
            half = 0.5 * half
        lo = np.maximum(best_x - half, 0.0)
        hi = best_x + half
    return best_x, sign * best_f


def grid_search_capacity(problem: CapacityProblem, n: Optional[int] = None, rounds: int = 80) -> float:
    """Brute-force Cap_{α,β}(E) by zoomed exhaustive grid search.

    With ≤ 3 ambient nodes the search runs over directions of g, each
    scaled to its cheapest feasible multiple.  With more ambient nodes and |E| ≤ 3 it runs over the concave
    dual in the multipliers, which has the same optimal value.  Independent
    of :func:`capacity`; meant as an oracle for tiny instances.  ``n`` is
    the points per axis (41 in ≤ 2 search dimensions, 21 in 3 by default).
    """
    E = list(problem.target)
    if not E:
        return 0.0
    A = problem.rows(E)
    w, beta = problem.weights, problem.beta
    m = len(w)
    if n is None:
        n = 41 if min(m, len(E)) <= 2 else 21
    if m <= 3:
        # every direction g ≥ 0 is scaled to its cheapest feasible multiple g/min(Ag)
        def primal(G):
            slack = (G @ A.T).min(axis=1)
            obj = (G ** beta * w[None, :]).sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = obj / slack ** beta
            return np.where(slack > 0, val, np.inf)

        _, val = _zoom_search(primal, np.zeros(m), np.ones(m), n, rounds, maximize=False)
        return float(val)
    if len(E) > 3:
        raise ValueError("grid search supports ≤ 3 ambient nodes or ≤ 3 target nodes")
    ex = 1.0 / (beta - 1.0)

    def dual(L):
        C = np.maximum(L @ A, 0.0)
        G = (C / (beta * w[None, :])) ** ex
        return L.sum(axis=1) - (1 - 1 / beta) * (C * G).sum(axis=1)

    _, val = _zoom_search(dual, np.zeros(len(E)), np.ones(len(E)), n, rounds, maximize=True)
    return float(val)
