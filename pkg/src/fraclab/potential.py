"""Truncated Wolff potentials and the ball / composition / growth checks.

W^R_{α,p}[μ](x) = ∫_0^R (μ(B_r(x)) / r^{N-αp})^{1/(p-1)} dr/r.

A grid measure is a set of point masses at nodes, so r ↦ μ(B_r(x)) is a
step function and the integral is a finite sum of closed-form pieces
(no radial quadrature error).  Two refinements keep the values finite
where a pure point-mass reading would not be:

* the density mass of the node at which W is evaluated is spread over a
  ball of the cell's volume (radius r_c with ω_N r_c^N = w);
* an atom sitting at the evaluation node gives W = ∞, and integrals of
  W^E over that node's cell use the exact radial profile of the atom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.spatial.distance import cdist

from .domain import DiscreteDomain, MeasureData, unit_ball_volume


@dataclass(frozen=True)
class WolffQuery:
    """Order ``alpha``, exponent ``p``, truncation radius ``R``.

    ``radial_grid`` is the radius count used by the continuum (quadrature)
    path; grid measures are integrated exactly.
    """

    alpha: float
    p: float
    R: float
    radial_grid: int = 512

    def validate(self, N: int) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 1 < self.p < N / self.alpha:
            raise ValueError(f"p must lie in (1, N/alpha) = (1, {N / self.alpha:g})")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if self.radial_grid < 16:
            raise ValueError("radial_grid must be >= 16")

    def gamma(self, N):
        """Decay exponent (N-αp)/(p-1) of the potential of a point mass."""
        return (N - self.alpha * self.p) / (self.p - 1)

    def delta(self):
        return self.alpha * self.p / (self.p - 1)

    @classmethod
    def for_domain(cls, domain: DiscreteDomain, alpha, p, factor=2.0, radial_grid=512):
        """Query with R = factor·diam(Ω)."""
        return cls(float(alpha), float(p), factor * domain.diam, radial_grid)


@dataclass(frozen=True)
class UniformBall:
    """Continuum measure: total ``mass`` spread uniformly on B(center, radius)."""

    center: tuple
    radius: float
    mass: float = 1.0

    @property
    def dim(self):
        return len(self.center)

    def ball_mass(self, x, r):
        """μ(B_r(x)) from the exact overlap volume."""
        N = self.dim
        d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(self.center, float)))
        return self.mass * _overlap(N, d, r, self.radius) / (unit_ball_volume(N) * self.radius ** N)


def _overlap(N, d, r, a):
    """Volume of B_r ∩ B_a with centres at distance d (N = 1 or 2)."""
    if r <= 0:
        return 0.0
    if d >= r + a:
        return 0.0
    if d <= abs(r - a):
        return unit_ball_volume(N) * min(r, a) ** N
    if N == 1:
        return min(d + r, a) - max(d - r, -a)
    # lens area
    c1 = np.clip((d * d + r * r - a * a) / (2 * d * r), -1.0, 1.0)
    c2 = np.clip((d * d + a * a - r * r) / (2 * d * a), -1.0, 1.0)
    k = (-d + r + a) * (d + r - a) * (d - r + a) * (d + r + a)
    return r * r * math.acos(c1) + a * a * math.acos(c2) - 0.5 * math.sqrt(max(k, 0.0))


def _cell_radius(domain: DiscreteDomain):
    """Radius of the ball with the volume of one interior cell, per node."""
    N = domain.dim
    return (domain.weights / unit_ball_volume(N)) ** (1.0 / N)


def _masses(mu: MeasureData, absolute: bool):
    if not mu.is_nonnegative():
        if not absolute:
            raise ValueError("signed measure: pass absolute=True to use |μ|")
        mu = mu.absolute()
    return mu.atom_masses, mu.density * mu.domain.weights


def _segment_sum(d, m, theta, gam, R):
    """Σ_k M_k^θ (c_k^{-γ} − c_{k+1}^{-γ})/γ with c = min(sorted d, R), c_{K+1} = R.

    Rows of ``d`` are distance lists (all > 0), ``m`` the matching masses;
    ``R`` is a scalar or one radius per row.
    """
    order = np.argsort(d, axis=1, kind="stable")
    ds = np.take_along_axis(d, order, axis=1)
    M = np.cumsum(np.take_along_axis(m, order, axis=1), axis=1)
    R = np.broadcast_to(np.asarray(R, float).reshape(-1, 1), (ds.shape[0], 1))
    c = np.minimum(ds, R)
    cnext = np.concatenate([c[:, 1:], R], axis=1)
    piece = M ** theta * (c ** (-gam) - cnext ** (-gam)) / gam
    return piece.sum(axis=1)


def _wolff_at(points, domain, atoms, cells, q: WolffQuery, chunk=256, radii=None):
    """W at arbitrary points for the grid measure (atom masses, cell masses).

    ``radii`` optionally replaces q.R by one truncation radius per point.
    """
    N = domain.dim
    theta = 1.0 / (q.p - 1)
    gam = q.gamma(N)
    dlt = q.delta()
    Rall = np.full(points.shape[0], q.R) if radii is None else np.asarray(radii, float)
    if np.any(Rall <= 0):
        raise ValueError("truncation radii must be positive")
    tot = atoms + cells
    supp = np.flatnonzero(tot > 0)
    out = np.zeros(points.shape[0])
    if supp.size == 0:
        return out
    X = domain.interior_points[supp]
    msupp = tot[supp]
    rc_all = _cell_radius(domain)[supp]
    for a in range(0, points.shape[0], chunk):
        P = points[a:a + chunk]
        R = Rall[a:a + chunk]
        D = cdist(P, X)
        own_r, own_c = np.nonzero(D == 0.0)
        extra = np.zeros(P.shape[0])
        bad = np.zeros(P.shape[0], bool)
        if own_r.size:
            j = supp[own_c]
            bad[own_r[atoms[j] > 0]] = True
            rc = rc_all[own_c]
            m0 = cells[j]
            # own cell: uniform ball of radius rc, then a point mass beyond rc
            extra[own_r] = (m0 / rc ** N) ** theta * np.minimum(rc, R[own_r]) ** dlt / dlt
            D[own_r, own_c] = rc
            near = np.sort(D[own_r], axis=1)
            if near.shape[1] > 1 and np.any(near[:, 1] < rc):
                raise ValueError("nodes closer than the cell radius: own-cell model does not apply")
        W = _segment_sum(D, np.broadcast_to(msupp, D.shape), theta, gam, R) + extra
        W[bad] = np.inf
        out[a:a + chunk] = W
    return out


def wolff_potential(mu, x, q: WolffQuery, absolute: bool = False) -> float:
    """W^R_{α,p}[μ](x) for a grid measure or a :class:`UniformBall`."""
    if isinstance(mu, UniformBall):
        return _wolff_continuum(mu, x, q)
    dom = mu.domain
    q.validate(dom.dim)
    atoms, cells = _masses(mu, absolute)
    x = np.asarray(x, float).reshape(1, dom.dim)
    return float(_wolff_at(x, dom, atoms, cells, q)[0])


def wolff_field(mu: MeasureData, q: WolffQuery, absolute: bool = False, radii=None) -> np.ndarray:
    """W^R_{α,p}[μ] at every interior node (∞ at atoms).

    ``radii`` gives a per-node truncation radius in place of q.R.
    """
    dom = mu.domain
    q.validate(dom.dim)
    atoms, cells = _masses(mu, absolute)
    return _wolff_at(dom.interior_points, dom, atoms, cells, q, radii=radii)


def _wolff_continuum(ball: UniformBall, x, q: WolffQuery) -> float:
    N = ball.dim
    q.validate(N)
    theta = 1.0 / (q.p - 1)
    x = np.asarray(x, float).reshape(N)
    d = float(np.linalg.norm(x - np.asarray(ball.center, float)))

    def f(r):
        m = ball.ball_mass(x, r)
        return (m * r ** (q.alpha * q.p - N)) ** theta / r if m > 0 else 0.0

    brk = sorted({b for b in (abs(d - ball.radius), d + ball.radius) if 0 < b < q.R})
    edges = [0.0] + brk + [q.R]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = quad(f, lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)
        total += val
    return total


def cell_power_integral(mu: MeasureData, q: WolffQuery, E: float, absolute: bool = False,
                        field: Optional[np.ndarray] = None) -> np.ndarray:
    """∫_{cell_i} W[μ]^E dx per interior node.

    Nodes without an atom use W(x_i)^E w_i.  An atom node integrates the
    radial profile of its own atom over the equal-volume ball, which is
    finite iff γE < N with γ = (N−αp)/(p−1).
    """
    dom = mu.domain
    N = dom.dim
    atoms, cells = _masses(mu, absolute)
    W = wolff_field(mu, q, absolute) if field is None else field
    with np.errstate(over="ignore"):
        out = W ** E * dom.weights
    gam = q.gamma(N)
    theta = 1.0 / (q.p - 1)
    rc_all = _cell_radius(dom)
    tot = atoms + cells
    for j in np.flatnonzero(atoms > 0):
        if gam * E >= N:
            out[j] = np.inf
            continue
        others = np.flatnonzero(tot > 0)
        others = others[others != j]
        d = np.linalg.norm(dom.interior_points[others] - dom.interior_points[j], axis=1)
        rc = rc_all[j]
        a = tot[j]
        R = q.R
        if others.size:
            c1 = min(float(d.min()), R)
            # everything from the nearest other node on (independent of r < c1):
            # the atom placed at that distance contributes an empty segment
            dd = np.concatenate([[float(d.min())], d])[None, :]
            mm = np.concatenate([[a], tot[others]])[None, :]
            rest = float(_segment_sum(dd, mm, theta, gam, R)[0])
            if c1 < rc:
                raise ValueError("nodes closer than the cell radius")
        else:
            c1, rest = R, 0.0

        A = a ** theta / gam
        rr = min(rc, R)

        def prof(u):
            # F(r)^E e^u with r = rr·e^{u/N}, written as (r^γ F)^E e^{u(1−γE/N)}·rr^{−γE}
            z = math.exp(gam * u / N)
            scaled = A * (1.0 - (rr / c1) ** gam * z) + rest * rr ** gam * z
            return scaled ** E * math.exp(u * (1.0 - gam * E / N))

        # prefactor rr^{-γE}; the cell is the equal-volume ball (radius capped at R)
        pref = rr ** (-gam * E) * (rr / rc) ** N

        val, _ = quad(prof, -np.inf, 0.0, epsabs=0.0, epsrel=1e-10, limit=400)
        out[j] = pref * val * dom.weights[j]
    return out


# ---------------------------------------------------------------------------
# condition checkers


@dataclass
class BallCheck:
    max_ratio: float
    ratios: list  # per ball, None where τ(B)=0
    exponent: float


def check_ball_condition(tau: MeasureData, kappa: float, q: WolffQuery, balls: Sequence,
                         exponent: str = "kappa") -> BallCheck:
    """max over balls B of ∫_B (W[τ⌊B])^E dx / τ(B).

    ``balls`` is a list of (center, radius).  ``exponent`` selects E = κ
    (``"kappa"``) or E = κ/(p−1) (``"kappa_over_p_minus_1"``).  Balls with
    τ(B) = 0 are skipped.
    """
    if not tau.is_nonnegative():
        raise ValueError("τ must be nonnegative")
    if not kappa > q.p - 1:
        raise ValueError("need kappa > p-1")
    if exponent == "kappa":
        E = kappa
    elif exponent == "kappa_over_p_minus_1":
        E = kappa / (q.p - 1)
    else:
        raise ValueError(f"unknown exponent variant {exponent!r}")
    dom = tau.domain
    pts = dom.interior_points
    ratios = []
    for center, radius in balls:
        inside = np.linalg.norm(pts - np.asarray(center, float), axis=1) < radius
        tB = tau.restrict(inside)
        mass = tB.total_mass
        if mass <= 0:
            ratios.append(None)
            continue
        cells = cell_power_integral(tB, q, E)
        ratios.append(float(cells[inside].sum() / mass))
    finite = [r for r in ratios if r is not None]
    return BallCheck(max(finite) if finite else float("nan"), ratios, E)


@dataclass
class CompositionCheck:
    ratio: float  # sup over nodes with 0 < W[τ] < ∞ of W[W[τ]^κ] / W[τ]
    inner: np.ndarray = field(repr=False)
    outer: np.ndarray = field(repr=False)


def check_wolff_composition(tau: MeasureData, kappa: float, q: WolffQuery) -> CompositionCheck:
    """sup of W[(W[τ])^κ dx] / W[τ] over interior nodes where W[τ] is positive and finite."""
    if not tau.is_nonnegative():
        raise ValueError("τ must be nonnegative")
    dom = tau.domain
    if tau.is_zero():
        z = np.zeros(dom.n_interior)
        return CompositionCheck(0.0, z, z)
    F1 = wolff_field(tau, q)
    dens = cell_power_integral(tau, q, kappa, field=F1) / dom.weights
    if not np.all(np.isfinite(dens)):
        return CompositionCheck(np.inf, F1, np.full(dom.n_interior, np.inf))
    F2 = wolff_field(MeasureData.from_density(dom, dens), q)
    ok = (F1 > 0) & np.isfinite(F1)
    return CompositionCheck(float(np.max(F2[ok] / F1[ok])), F1, F2)


@dataclass
class GrowthFit:
    slopes: list
    threshold: float
    passed: bool
    radii: list = field(default_factory=list)


def growth_threshold(kappa, N, s, p):
    """(κ(N−sp) − N(p−1)) / (κ−p+1)."""
    return (kappa * (N - s * p) - N * (p - 1)) / (kappa - p + 1)


def measure_growth_exponent(tau: MeasureData, kappa: float, spec, centers: Sequence,
                            r_min: Optional[float] = None, r_max: Optional[float] = None,
                            n_radii: int = 12, margin: float = 0.1) -> GrowthFit:
    """Least-squares slope of log τ(B_t(x)) against log t at each center.

    Radii are log-spaced in [4h, diam/4] unless given.  Passes iff every
    slope is at least the growth threshold minus ``margin``.
    """
    dom = tau.domain
    N = dom.dim
    r_min = 4 * dom.h if r_min is None else r_min
    r_max = dom.diam / 4 if r_max is None else r_max
    if not r_max > r_min:
        raise ValueError("empty radius range")
    t = np.geomspace(r_min, r_max, n_radii)
    masses = np.abs(tau.node_masses) if not tau.is_nonnegative() else tau.node_masses
    slopes = []
    for c in centers:
        d = np.linalg.norm(dom.interior_points - np.asarray(c, float), axis=1)
        m = np.array([masses[d < r].sum() for r in t])
        use = m > 0
        if use.sum() < 4:
            raise ValueError(f"fewer than 4 radii with positive mass around {list(c)}")
        slopes.append(float(np.polyfit(np.log(t[use]), np.log(m[use]), 1)[0]))
    thr = growth_threshold(kappa, N, spec.s, spec.p)
    return GrowthFit(slopes, thr, all(sl >= thr - margin for sl in slopes), t.tolist())
