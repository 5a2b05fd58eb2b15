"""Lebesgue, Marcinkiewicz and Gagliardo quantities on grid fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pairsums import RadialKernel, full_pair_sum, interior_pair_sum, row_sums


def _abs_and_weights(f, weights):
    """``weights`` may be an array or a domain (weights matched to the field length)."""
    if hasattr(weights, "weights_for"):
        weights = weights.weights_for(f)
    f = np.abs(np.asarray(f, dtype=float)).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if f.shape != w.shape:
        raise ValueError("field and weights differ in length")
    return f, w


def distribution_function(f, a: float, weights) -> float:
    """λ_f(a): total weight of nodes with |f| > a."""
    if not a > 0:
        raise ValueError("threshold must be positive")
    f, w = _abs_and_weights(f, weights)
    return float(w[f > a].sum())


def weak_norm_star(f, q: float, weights) -> float:
    """sup_a a·λ_f(a)^{1/q}, scanned at the node values of |f|."""
    if q < 1:
        raise ValueError("exponent must be >= 1")
    f, w = _abs_and_weights(f, weights)
    if not np.any(f > 0):
        return 0.0
    order = np.argsort(-f, kind="stable")
    fs, cw = f[order], np.cumsum(w[order])
    # close every tie group: λ just below a value counts all nodes at or above it
    last = np.r_[fs[1:] != fs[:-1], True]
    vals = fs[last] * cw[last] ** (1.0 / q)
    return float(vals[fs[last] > 0].max())


def weak_norm_sup(f, q: float, weights) -> float:
    """sup_ω ∫_ω|f| / |ω|^{1-1/q}, scanned over prefixes of nodes sorted by |f|.

    The prefix mean is accumulated as |f|_k plus a running sum of nonnegative
    excesses, so the result is never below :func:`weak_norm_star` even in
    floating point.
    """
    if q <= 1:
        raise ValueError("exponent must be > 1")
    f, w = _abs_and_weights(f, weights)
    if not np.any(f > 0):
        return 0.0
    order = np.argsort(-f, kind="stable")
    fs, cw = f[order], np.cumsum(w[order])
    # Σ_{i≤k} (f_i − f_k) w_i = Σ_{j≤k} (f_{j−1} − f_j)·|ω_{j−1}|, all terms ≥ 0
    excess = np.concatenate(([0.0], np.cumsum((fs[:-1] - fs[1:]) * cw[:-1])))
    mean = fs + excess / cw
    return float(np.max(mean * cw ** (1.0 / q)))


def lebesgue_norm(f, q: float, weights) -> float:
    f, w = _abs_and_weights(f, weights)
    return float((f ** q * w).sum() ** (1.0 / q))


@dataclass(frozen=True)
class SeminormSpec:
    """Differentiability order ``h`` and summability ``q`` of W^{h,q}."""

    h: float
    q: float

    def validate(self, N: int, s: float, p: float) -> None:
        if not 0 < self.h < s:
            raise ValueError(f"need 0 < h < s, got h={self.h}, s={s}")
        qmax = N * (p - 1) / (N - s)
        if not 0 < self.q < qmax:
            raise ValueError(f"need 0 < q < {qmax:g}, got q={self.q}")


def pair_power_sum(domain, f, q: float, kern: RadialKernel) -> float:
    """Σ_{i≠j} |f_i-f_j|^q k(|x_i-x_j|) w_i w_j over all nodes, f zero-extended.

    Interior-length ``f`` uses the interior block plus exterior row sums;
    a full-length ``f`` is summed pair by pair.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[0] == domain.n_total and domain.n_exterior > 0:
        if np.any(f[domain.n_interior:]):
            return full_pair_sum(domain, kern, f, q)
        f = f[: domain.n_interior]
    if f.shape[0] != domain.n_interior:
        raise ValueError("field length does not match the domain")
    if not np.any(f):
        return 0.0
    _, s_ext = row_sums(domain, kern)
    return interior_pair_sum(domain, kern, f, q) + 2.0 * float((np.abs(f) ** q * s_ext).sum())


def gagliardo_seminorm(domain, f, spec: SeminormSpec, s=None, p=None) -> float:
    """(Σ_{i≠j} |f_i−f_j|^q / |x_i−x_j|^{N+hq} w_i w_j)^{1/q}.

    Pass ``s`` and ``p`` to enforce the admissible range of ``spec``.
    """
    if s is not None and p is not None:
        spec.validate(domain.dim, s, p)
    elif not (spec.h > 0 and spec.q > 0):
        raise ValueError("h and q must be positive")
    kern = RadialKernel(domain.dim + spec.h * spec.q)
    return pair_power_sum(domain, f, spec.q, kern) ** (1.0 / spec.q)
