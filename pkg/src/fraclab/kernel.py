"""Kernel assembly, the discrete nonlocal operator, energies and Tail.

Convention: the pair weights are ``k_ij = K(x_i, x_j) w_i w_j`` and the
energy sums over ordered pairs, so its gradient at node i is
``2 w_i (Lu)_i``; this is the scaling under which minimizers of J satisfy
the double-integral weak identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gamma

from .domain import DiscreteDomain, sphere_area
from .pairsums import (ConvolutionBlock, RadialKernel, full_pair_sum, interior_block,
                       row_sums)
from .norms import pair_power_sum


def c_ns(N: int, s: float) -> float:
    """Normalization making the p=2 operator equal (-Δ)^s."""
    return 2 ** (2 * s) * s * gamma((N + 2 * s) / 2) / (math.pi ** (N / 2) * gamma(1 - s))


def phi(t, p):
    """|t|^{p-2} t."""
    t = np.asarray(t, dtype=float)
    if p == 2:
        return t
    return np.sign(t) * np.abs(t) ** (p - 1)


@dataclass(frozen=True)
class KernelSpec:
    """Order ``s``, exponent ``p``, ellipticity ``lambda_K`` and kernel profile.

    ``profile="power"`` is ``c·|x-y|^{-N-sp}``.  ``profile="cosine"`` multiplies
    it by ``A + θB cos(2πr/ℓ)`` with ``A ± B = Λ_K^{±1}``, which stays inside
    the ellipticity band.
    """

    s: float
    p: float
    lambda_K: float = 1.0
    profile: str = "power"
    c_ns: Optional[float] = None
    modulation_length: float = 0.25
    modulation_amplitude: float = 1.0

    def validate(self, N: int) -> None:
        if not 0 < self.s < 1:
            raise ValueError("s must lie in (0, 1)")
        if not 1 < self.p < N / self.s:
            raise ValueError(f"p must lie in (1, N/s) = (1, {N / self.s:g})")
        if self.lambda_K < 1:
            raise ValueError("lambda_K must be >= 1")
        if self.profile not in ("power", "cosine"):
            raise ValueError(f"unknown kernel profile {self.profile!r}")
        lo, hi = self.factor_range()
        tol = 1e-12
        if lo < 1 / self.lambda_K - tol or hi > self.lambda_K + tol:
            raise ValueError("kernel factor leaves the ellipticity band [1/Λ_K, Λ_K]")

    @property
    def sp(self):
        return self.s * self.p

    def scale(self) -> float:
        return 1.0 if self.c_ns is None else float(self.c_ns)

    def factor_range(self):
        c = self.scale()
        if self.profile == "power":
            return c, c
        A, B = self._cosine_coeffs()
        return c * (A - B), c * (A + B)

    def _cosine_coeffs(self):
        L = self.lambda_K
        A = 0.5 * (L + 1 / L)
        B = 0.5 * (L - 1 / L) * self.modulation_amplitude
        return A, B

    def radial(self, N: int) -> RadialKernel:
        alpha = N + self.sp
        if self.profile == "power":
            return RadialKernel(alpha, self.scale())
        A, B = self._cosine_coeffs()
        ell = self.modulation_length

        def mod(r):
            return A + B * np.cos(2 * np.pi * r / ell)

        return RadialKernel(alpha, self.scale(), mod, key=("cosine", alpha, self.scale(), A, B, ell))

    def pure(self, N: int) -> RadialKernel:
        """Unit pure-power kernel |x-y|^{-N-sp}."""
        return RadialKernel(N + self.sp)


class KernelTable:
    """Weighted pair table of one kernel on one domain.

    Holds the dense interior block when it fits (``dense``), an FFT
    application of the block on lattice domains (``conv``), and the interior
    and exterior row sums.  Immutable after assembly.
    """

    def __init__(self, domain: DiscreteDomain, spec: KernelSpec, dense=None, conv=None,
                 s_int=None, s_ext=None):
        self.domain = domain
        self.spec = spec
        self.kern = spec.radial(domain.dim)
        self.dense = dense
        self.conv = conv
        self.s_int = s_int
        self.s_ext = s_ext
        for a in (dense, s_int, s_ext):
            if a is not None:
                a.setflags(write=False)

    @property
    def p(self):
        return self.spec.p

    @property
    def n(self):
        return self.domain.n_interior

    def block_matvec(self, u):
        if self.dense is not None:
            return self.dense @ u
        return self.conv.matvec(u)

    def full_block(self):
        """Dense weighted table over all nodes (interior first); small domains only."""
        P = self.domain.all_points
        W = self.domain.all_weights
        from scipy.spatial.distance import cdist
        d = cdist(P, P)
        np.fill_diagonal(d, 1.0)
        K = self.kern(d) * W[:, None] * W[None, :]
        np.fill_diagonal(K, 0.0)
        return K


def assemble_kernel(domain: DiscreteDomain, spec: KernelSpec, dense: Optional[bool] = None,
                    dense_cap: int = 4096) -> KernelTable:
    """Build the kernel table; the dense block is stored when n_interior ≤ dense_cap."""
    spec.validate(domain.dim)
    n = domain.n_interior
    if dense is None:
        dense = n <= dense_cap
    if domain.lattice is None and n > 1:
        from scipy.spatial import cKDTree
        if cKDTree(domain.all_points).query_pairs(1e-14):
            raise ValueError("coincident nodes make the kernel singular")
    kern = spec.radial(domain.dim)
    K = interior_block(domain, kern) if dense else None
    conv = ConvolutionBlock(domain, kern) if domain.lattice is not None else None
    if K is None and conv is None:
        raise ValueError("unstructured domains need the dense block")
    s_int, s_ext = row_sums(domain, kern)
    return KernelTable(domain, spec, K, conv, s_int.copy(), s_ext.copy())


def _split(table, u):
    u = np.asarray(u, dtype=float)
    n = table.n
    if u.shape[0] == n:
        return u, False
    if u.shape[0] == table.domain.n_total:
        return u, True
    raise ValueError("field length does not match the kernel table")


def weak_form(table: KernelTable, u, p: Optional[float] = None) -> np.ndarray:
    """Σ_j 2 φ(u_i-u_j) k_ij + 2 φ(u_i) e_i at interior nodes (u zero on the collar)."""
    p = table.p if p is None else p
    u = np.asarray(u, dtype=float)
    if p == 2 and table.dense is None:
        lin = table.s_int * u - table.conv.matvec(u)
    else:
        K = table.dense
        if K is None:
            raise ValueError("p != 2 on a large grid needs the dense block")
        lin = (phi(u[:, None] - u[None, :], p) * K).sum(axis=1)
    return 2.0 * (lin + phi(u, p) * table.s_ext)


def apply_operator(table: KernelTable, u, p: Optional[float] = None) -> np.ndarray:
    """(Lu)_i = Σ_{j≠i} |u_i−u_j|^{p−2}(u_i−u_j) k_ij / w_i.

    For an interior-length field the collar values are zero and the output
    covers interior nodes; for a full-length field every node is returned.
    """
    p = table.p if p is None else p
    u, full = _split(table, u)
    if full:
        K = table.full_block()
        return (phi(u[:, None] - u[None, :], p) * K).sum(axis=1) / table.domain.all_weights
    return 0.5 * weak_form(table, u, p) / table.domain.weights


def energy(table: KernelTable, u, p: Optional[float] = None) -> float:
    """(1/p) Σ_{i≠j} |u_i−u_j|^p k_ij over ordered pairs of all nodes."""
    p = table.p if p is None else p
    u, full = _split(table, u)
    if full:
        return full_pair_sum(table.domain, table.kern, u, p) / p
    if p == 2 and table.dense is None:
        quad = 2.0 * float(u @ (table.s_int * u - table.conv.matvec(u)))
    elif table.dense is not None:
        quad = float((np.abs(u[:, None] - u[None, :]) ** p * table.dense).sum())
    else:
        return pair_power_sum(table.domain, u, p, table.kern) / p
    return (quad + 2.0 * float((np.abs(u) ** p * table.s_ext).sum())) / p


def energy_gradient(table: KernelTable, u, p: Optional[float] = None) -> np.ndarray:
    """∂ energy / ∂u_i at interior nodes, equal to 2 w_i (Lu)_i."""
    return weak_form(table, u, p)


def truncate(u, k):
    """T_k(u) = max(-k, min(k, u))."""
    return np.clip(u, -k, k)


def truncation_energy(domain: DiscreteDomain, u, k: float, spec: KernelSpec) -> float:
    """Gagliardo (s,p)-seminorm to the power p of T_k(u), pure-power kernel."""
    if not k > 0:
        raise ValueError("truncation level must be positive")
    return pair_power_sum(domain, truncate(np.asarray(u, float), k), spec.p, spec.pure(domain.dim))


@dataclass
class TailResult:
    value: float
    truncated: bool  # no nodes outside B_r(x)
    collar_bound: float  # bound on the kernel mass beyond the collar, times sup|u|^{p-1}


def collar_truncation_bound(domain: DiscreteDomain, u, spec: KernelSpec) -> float:
    """Λ_K (sup|u|)^{p-1} |S^{N-1}| R_ext^{-sp} / (sp): operator mass lost beyond the collar."""
    if domain.r_ext <= 0:
        return math.inf
    sup = float(np.max(np.abs(u))) if np.size(u) else 0.0
    N = domain.dim
    return spec.lambda_K * sup ** (spec.p - 1) * sphere_area(N) * domain.r_ext ** (-spec.sp) / spec.sp


def tail(domain: DiscreteDomain, u, x, r: float, spec: KernelSpec) -> TailResult:
    """(r^{sp} Σ_{|x_j−x|≥r} |u_j|^{p−1} |x−x_j|^{−N−sp} w_j)^{1/(p−1)}."""
    if not r > 0:
        raise ValueError("radius must be positive")
    u = np.asarray(u, dtype=float)
    pts = domain.points_for(u)
    w = domain.weights_for(u)
    x = np.asarray(x, float).reshape(domain.dim)
    d = np.linalg.norm(pts - x, axis=1)
    out = d >= r
    bound = collar_truncation_bound(domain, u, spec)
    if not np.any(out):
        return TailResult(0.0, True, bound)
    p, N = spec.p, domain.dim
    S = float((np.abs(u[out]) ** (p - 1) * d[out] ** (-N - spec.sp) * w[out]).sum())
    return TailResult((r ** spec.sp * S) ** (1.0 / (p - 1)), False, bound)


def weighted_energy(domain: DiscreteDomain, u, xi: float, d: float, spec: KernelSpec,
                    chunk: int = 512) -> float:
    """Σ_{i≠j} |u_i−u_j|^p (d+|u_i|+|u_j|)^{−ξ} |x_i−x_j|^{−N−sp} w_i w_j (collar included)."""
    if not xi > 1 or not d > 0:
        raise ValueError("need xi > 1 and d > 0")
    u = np.asarray(u, dtype=float)
    p = spec.p
    kern = spec.pure(domain.dim)
    full = u.shape[0] == domain.n_total and domain.n_exterior > 0 and np.any(u[domain.n_interior:])
    if full:
        pts, W = domain.all_points, domain.all_weights
        uu = u
    else:
        pts, W = domain.interior_points, domain.weights
        uu = u[: domain.n_interior]
    from scipy.spatial.distance import cdist
    n = len(uu)
    total = 0.0
    for a in range(0, n, chunk):
        rows = np.arange(a, min(n, a + chunk))
        dist = cdist(pts[rows], pts)
        dist[np.arange(len(rows)), rows] = 1.0
        K = kern(dist) * W[rows, None] * W[None, :]
        K[np.arange(len(rows)), rows] = 0.0
        ui, uj = uu[rows, None], uu[None, :]
        total += float((np.abs(ui - uj) ** p / (d + np.abs(ui) + np.abs(uj)) ** xi * K).sum())
    if not full:
        _, s_ext = row_sums(domain, kern)
        total += 2.0 * float((np.abs(uu) ** p / (d + np.abs(uu)) ** xi * s_ext).sum())
    return total
