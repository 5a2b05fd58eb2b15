"""Weighted pair sums for radial kernels on a domain.

For a radial kernel ``k(r)`` the quantities needed everywhere are

* the interior block ``k(|x_i - x_j|) w_i w_j`` (i != j, both in Ω),
* interior row sums of that block,
* exterior row sums ``e_i = sum over collar nodes j of k(|x_i - x_j|) w_i w_j``.

On lattice domains the exterior sums are formed as (all lattice nodes) minus
(interior nodes); the first term is a rectangle query on a summed-area table
of kernel values indexed by lattice offset, the second an FFT convolution of
the interior mask.  Unstructured domains sum directly.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy import fft as sfft
from scipy.spatial.distance import cdist


class RadialKernel:
    """``k(r) = scale * r**(-alpha) * modulation(r)``; hashable key for caching."""

    def __init__(self, alpha, scale=1.0, modulation=None, key=None):
        self.alpha = float(alpha)
        self.scale = float(scale)
        self.modulation = modulation
        self.key = key if key is not None else ("power", self.alpha, self.scale)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            val = self.scale * r ** (-self.alpha)
        if self.modulation is not None:
            val = val * self.modulation(r)
        return val


def _offset_values(kern: RadialKernel, h, half_shape):
    """Kernel at lattice offsets ``-(n-1)..(n-1)`` per axis; zero at the origin."""
    axes = [np.arange(-(n - 1), n) * h for n in half_shape]
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    r = np.sqrt(sum(g ** 2 for g in grids))
    vals = kern(np.where(r == 0, 1.0, r))
    vals[tuple(n - 1 for n in half_shape)] = 0.0
    return vals


def _rect_sums(sat, starts, size):
    """Sums of the source array over boxes ``[start, start+size)`` from a padded SAT."""
    d = starts.shape[1]
    total = np.zeros(starts.shape[0])
    for corner in itertools.product((0, 1), repeat=d):
        idx = tuple(starts[:, a] + (size[a] if c else 0) for a, c in enumerate(corner))
        sign = (-1) ** (d - sum(corner))
        total += sign * sat[idx]
    return total


def interior_block(domain, kern: RadialKernel, rows=None):
    """Dense weighted block ``k_ij = k(|x_i-x_j|) w_i w_j`` with zero diagonal."""
    X = domain.interior_points
    w = domain.weights
    rows = np.arange(domain.n_interior) if rows is None else np.asarray(rows)
    d = cdist(X[rows], X)
    d[np.arange(len(rows)), rows] = 1.0
    K = kern(d) * w[rows, None] * w[None, :]
    K[np.arange(len(rows)), rows] = 0.0
    return K


def row_sums(domain, kern: RadialKernel):
    """(interior row sums, exterior row sums) of the weighted kernel, cached per kernel."""
    key = ("rowsums", kern.key)
    if key in domain._cache:
        return domain._cache[key]
    if domain.lattice is not None:
        out = _lattice_row_sums(domain, kern)
    else:
        out = _direct_row_sums(domain, kern)
    domain._cache[key] = out
    return out


def _direct_row_sums(domain, kern, chunk=1024):
    n = domain.n_interior
    s_int = np.empty(n)
    s_ext = np.zeros(n)
    ext = domain.exterior_points
    we = domain.exterior_weights
    for a in range(0, n, chunk):
        rows = np.arange(a, min(n, a + chunk))
        s_int[rows] = interior_block(domain, kern, rows).sum(axis=1)
        if len(ext):
            d = cdist(domain.interior_points[rows], ext)
            s_ext[rows] = (kern(d) * we[None, :]).sum(axis=1) * domain.weights[rows]
    return s_int, s_ext


def _lattice_row_sums(domain, kern):
    lat = domain.lattice
    h = lat.h
    w2 = h ** (2 * lat.dim)
    M = np.array(lat.shape)
    idx = domain._cache["lattice_index"]
    # all lattice nodes: rectangle queries on the SAT of offset values
    koff = _offset_values(kern, h, M)
    sat = np.zeros(tuple(2 * M), dtype=float)
    sat[tuple(slice(1, None) for _ in M)] = koff
    for a in range(lat.dim):
        np.cumsum(sat, axis=a, out=sat)
    s_all = _rect_sums(sat, idx, M) * w2
    del sat, koff
    conv = ConvolutionBlock(domain, kern)
    s_int = conv.matvec(np.ones(domain.n_interior))
    return s_int, s_all - s_int


class ConvolutionBlock:
    """FFT application of the interior block on a lattice domain."""

    def __init__(self, domain, kern: RadialKernel):
        lat = domain.lattice
        if lat is None:
            raise ValueError("convolution needs a lattice domain")
        idx = domain._cache["lattice_index"]
        self.lo = idx.min(axis=0)
        B = idx.max(axis=0) - self.lo + 1
        self.B = B
        self.local = tuple((idx - self.lo).T)
        self.shape_fft = tuple(sfft.next_fast_len(int(2 * b - 1), real=True) for b in B)
        koff = _offset_values(kern, lat.h, B) * lat.h ** (2 * lat.dim)
        self.kfft = sfft.rfftn(koff, s=self.shape_fft)
        self.n = idx.shape[0]

    def matvec(self, u):
        buf = np.zeros(tuple(self.B))
        buf[self.local] = u
        out = sfft.irfftn(sfft.rfftn(buf, s=self.shape_fft) * self.kfft, s=self.shape_fft)
        sl = tuple(slice(b - 1, 2 * b - 1) for b in self.B)
        return out[sl][self.local]


def interior_pair_sum(domain, kern: RadialKernel, f, q, chunk=512):
    """Σ_{i≠j in Ω} |f_i-f_j|^q k(|x_i-x_j|) w_i w_j, accumulated in fixed row blocks."""
    n = domain.n_interior
    total = 0.0
    for a in range(0, n, chunk):
        rows = np.arange(a, min(n, a + chunk))
        K = interior_block(domain, kern, rows)
        total += float((np.abs(f[rows, None] - f[None, :]) ** q * K).sum())
    return total


def full_pair_sum(domain, kern: RadialKernel, f, q, chunk=512):
    """Same sum over every node of the domain (interior and collar)."""
    P = domain.all_points
    W = domain.all_weights
    n = P.shape[0]
    total = 0.0
    for a in range(0, n, chunk):
        rows = np.arange(a, min(n, a + chunk))
        d = cdist(P[rows], P)
        d[np.arange(len(rows)), rows] = 1.0
        K = kern(d) * W[rows, None] * W[None, :]
        K[np.arange(len(rows)), rows] = 0.0
        total += float((np.abs(f[rows, None] - f[None, :]) ** q * K).sum())
    return total
