"""Monotone nonlinearities g with g(0)=0 and their primitives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq


@dataclass(frozen=True)
class Nonlinearity:
    """g(t) of kind ``zero``, ``power`` (|t|^{κ-1}t), ``truncated`` (T_n∘base) or ``table``.

    ``table`` interpolates monotone samples ``(knots, values)`` linearly and
    extends them with the end slopes.
    """

    kind: str = "zero"
    kappa: float = 1.0
    level: Optional[float] = None
    base: Optional["Nonlinearity"] = None
    knots: Optional[tuple] = None
    values: Optional[tuple] = None

    # -- constructors
    @staticmethod
    def zero():
        return Nonlinearity("zero")

    @staticmethod
    def power(kappa: float):
        if kappa <= 0:
            raise ValueError("power exponent must be positive")
        return Nonlinearity("power", kappa=float(kappa))

    @staticmethod
    def linear():
        return Nonlinearity("power", kappa=1.0)

    @staticmethod
    def table(knots, values):
        knots = np.asarray(knots, float)
        values = np.asarray(values, float)
        order = np.argsort(knots)
        knots, values = knots[order], values[order]
        g = Nonlinearity("table", knots=tuple(knots), values=tuple(values))
        g.check()
        return g

    def truncated(self, n: float) -> "Nonlinearity":
        if n <= 0:
            raise ValueError("truncation level must be positive")
        return Nonlinearity("truncated", level=float(n), base=self)

    # -- evaluation
    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = self.kind
        if k == "zero":
            return np.zeros_like(t)
        if k == "power":
            if self.kappa == 1.0:
                return t.copy()
            return np.sign(t) * np.abs(t) ** self.kappa
        if k == "truncated":
            return np.clip(self.base(t), -self.level, self.level)
        if k == "table":
            return self._table_eval(t)[0]
        raise ValueError(f"unknown nonlinearity kind {k!r}")

    def derivative(self, t):
        """g'(t); one-sided where g has kinks, finite everywhere."""
        t = np.asarray(t, dtype=float)
        k = self.kind
        if k == "zero":
            return np.zeros_like(t)
        if k == "power":
            if self.kappa == 1.0:
                return np.ones_like(t)
            return self.kappa * np.maximum(np.abs(t), 1e-12) ** (self.kappa - 1)
        if k == "truncated":
            inside = np.abs(self.base(t)) < self.level
            return np.where(inside, self.base.derivative(t), 0.0)
        if k == "table":
            return self._table_eval(t)[1]
        raise ValueError(k)

    def primitive(self, t):
        """G(t) = ∫_0^t g."""
        t = np.asarray(t, dtype=float)
        k = self.kind
        if k == "zero":
            return np.zeros_like(t)
        if k == "power":
            return np.abs(t) ** (self.kappa + 1) / (self.kappa + 1)
        if k == "truncated":
            n = self.level
            tp, tm = self._crossings()
            G = self.base.primitive(t)
            up = t > tp
            dn = t < tm
            if np.any(up):
                G = np.where(up, self.base.primitive(tp) + n * (t - tp), G)
            if np.any(dn):
                G = np.where(dn, self.base.primitive(tm) - n * (t - tm), G)
            return G
        if k == "table":
            return self._table_eval(t)[2]
        raise ValueError(k)

    def _crossings(self):
        """Points where the base reaches ±level (±inf if it never does)."""
        n = self.level
        b = self.base
        if b.kind == "power":
            r = n ** (1.0 / b.kappa)
            return r, -r
        if b.kind == "zero":
            return np.inf, -np.inf
        return _first_reach(b, n, +1), _first_reach(b, -n, -1)

    def _table_eval(self, t):
        x = np.asarray(self.knots)
        y = np.asarray(self.values)
        slopes = np.diff(y) / np.diff(x)
        # extend by end slopes
        xe = np.r_[x[0] - 1.0, x, x[-1] + 1.0]
        ye = np.r_[y[0] - slopes[0], y, y[-1] + slopes[-1]]
        se = np.r_[slopes[0], slopes, slopes[-1]]
        j = np.clip(np.searchsorted(xe, t, side="right") - 1, 0, len(xe) - 2)
        # linear pieces valid beyond the extension points as well
        g = ye[j] + se[j] * (t - xe[j])
        dg = se[j]
        # primitive: integrate from 0
        seg = 0.5 * (ye[1:] + ye[:-1]) * np.diff(xe)
        cum = np.r_[0.0, np.cumsum(seg)]
        j0 = int(np.clip(np.searchsorted(xe, 0.0, side="right") - 1, 0, len(xe) - 2))
        G0 = cum[j0] + ye[j0] * (0.0 - xe[j0]) + 0.5 * se[j0] * (0.0 - xe[j0]) ** 2

        def prim(jj, tt):
            return cum[jj] + ye[jj] * (tt - xe[jj]) + 0.5 * se[jj] * (tt - xe[jj]) ** 2

        G = prim(j, t) - G0
        return g, dg, G

    # -- properties
    def reflected(self) -> "Nonlinearity":
        """t ↦ -g(-t); equal to g for odd nonlinearities."""
        if self.kind in ("zero", "power"):
            return self
        if self.kind == "truncated":
            return self.base.reflected().truncated(self.level)
        x = -np.asarray(self.knots)[::-1]
        y = -np.asarray(self.values)[::-1]
        return Nonlinearity.table(x, y)

    def is_unbounded(self) -> bool:
        return self.kind == "power" or (self.kind == "table" and
                                        (self.values[0] != self.values[1] or self.values[-1] != self.values[-2]))

    def check(self, span: float = 1e3, n: int = 4001) -> None:
        """Verify monotonicity, g(0)=0 and G ≥ 0 on a sample grid; raise ValueError otherwise."""
        t = np.concatenate([-np.geomspace(span, 1e-6, n // 2), [0.0], np.geomspace(1e-6, span, n // 2)])
        g = self(t)
        if abs(float(self(np.array([0.0]))[0])) > 1e-14:
            raise ValueError("g(0) must vanish")
        if np.any(np.diff(g) < -1e-12 * np.maximum(1.0, np.abs(g[1:]))):
            raise ValueError("g must be nondecreasing")
        G = self.primitive(t)
        if np.any(G < -1e-12 * np.maximum(1.0, np.abs(G))):
            raise ValueError("primitive must be nonnegative")

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "power":
            d["kappa"] = self.kappa
        if self.kind == "truncated":
            d["level"] = self.level
            d["base"] = self.base.describe()
        if self.kind == "table":
            d["knots"] = list(self.knots)
            d["values"] = list(self.values)
        return d

    @staticmethod
    def from_description(d: dict) -> "Nonlinearity":
        kind = d.get("kind", "zero")
        if kind == "zero":
            return Nonlinearity.zero()
        if kind == "power":
            return Nonlinearity.power(float(d["kappa"]))
        if kind == "linear":
            return Nonlinearity.linear()
        if kind == "truncated":
            return Nonlinearity.from_description(d["base"]).truncated(float(d["level"]))
        if kind == "table":
            return Nonlinearity.table(d["knots"], d["values"])
        raise ValueError(f"unknown nonlinearity kind {kind!r}")


def _first_reach(g, target, direction):
    """Smallest |t| with g(t) = target along the given direction, by bracketing."""
    hi = 1.0
    for _ in range(200):
        if direction * (g(np.array([direction * hi]))[0] - target) >= 0:
            break
        hi *= 2.0
    else:
        return direction * np.inf
    f = lambda s: float(g(np.array([direction * s]))[0] - target)
    return direction * brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14)


@dataclass(frozen=True)
class TailIntegral:
    value: float  # inf when divergent
    converged: bool
    ratio: float  # limiting ratio of successive dyadic blocks
    blocks: int


def tail_integral(f, q: float, start: float = 1.0, max_blocks: int = 160) -> TailIntegral:
    """∫_start^∞ f(t) t^{-q-1} dt for nonnegative f, by dyadic blocks with divergence detection.

    Each block ``[start·2^k, start·2^{k+1}]`` is integrated adaptively in the
    log variable.  Once the block ratio settles the remainder is summed as a
    geometric series; a settled ratio ≥ 1 signals divergence.
    """
    from scipy.integrate import quad

    ln2 = np.log(2.0)

    def block(k):
        def integrand(u):
            t = start * np.exp(u)
            return float(f(t)) * t ** (-q)
        val, _ = quad(integrand, k * ln2, (k + 1) * ln2, epsabs=0.0, epsrel=1e-13, limit=200)
        return val

    total = 0.0
    prev = None
    ratios = []
    for k in range(max_blocks):
        b = block(k)
        if not np.isfinite(b):
            return TailIntegral(np.inf, False, np.inf, k + 1)
        total += b
        if prev is not None and prev > 0:
            ratios.append(b / prev)
        prev = b
        if k >= 3 and b == 0.0 and total == 0.0:
            return TailIntegral(0.0, True, 0.0, k + 1)
        if len(ratios) >= 4:
            r = ratios[-1]
            settled = all(abs(x - r) <= 1e-7 * max(1.0, abs(r)) for x in ratios[-4:])
            if settled:
                if r >= 1.0:
                    return TailIntegral(np.inf, False, r, k + 1)
                if b * r / (1 - r) <= 1e-15 * total or k >= 12:
                    return TailIntegral(total + b * r / (1.0 - r), True, r, k + 1)
    r = ratios[-1] if ratios else 0.0
    if r >= 1.0:
        return TailIntegral(np.inf, False, r, max_blocks)
    return TailIntegral(total + prev * r / (1.0 - r), True, r, max_blocks)
