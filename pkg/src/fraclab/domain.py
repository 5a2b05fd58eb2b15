"""Collocation grids and grid measures.

A :class:`DiscreteDomain` carries the interior nodes of a bounded set Ω in
one or two dimensions together with an exterior collar on which fields are
held at zero.  Lattice domains (boxes and balls) keep the underlying tensor
lattice so that translation-invariant kernel sums can be done by FFT.

Fields are plain numpy arrays.  An array of length ``n_interior`` is the
interior part of a field that vanishes on the collar; an array of length
``n_total`` lists interior values first and exterior values after.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim (2 for dim=1)."""
    return dim * unit_ball_volume(dim)


@dataclass(eq=False)
class Lattice:
    """Uniform tensor lattice ``origin + k*h`` with ``k`` in ``[0, shape)``."""

    origin: np.ndarray
    h: float
    shape: tuple
    interior_mask: np.ndarray  # bool, lattice shape

    @property
    def dim(self):
        return len(self.shape)

    def coords(self, idx):
        return self.origin + self.h * np.asarray(idx, dtype=float)


class DiscreteDomain:
    """Interior nodes of Ω plus an exterior collar.

    Use :func:`box_domain`, :func:`ball_domain` or :meth:`from_points` to build one.
    """

    def __init__(self, dim, interior_points, weights, diam, r_ext, h,
                 geometry=None, lattice: Optional[Lattice] = None,
                 exterior_points=None, exterior_weights=None):
        self.dim = int(dim)
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        self.interior_points = np.asarray(interior_points, dtype=float).reshape(-1, self.dim)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        self.diam = float(diam)
        self.r_ext = float(r_ext)
        self.h = float(h)
        self.geometry = dict(geometry or {"kind": "points"})
        self.lattice = lattice
        self._ext_pts = None if exterior_points is None else np.asarray(exterior_points, float).reshape(-1, self.dim)
        self._ext_w = None if exterior_weights is None else np.asarray(exterior_weights, float).reshape(-1)
        self._cache: dict = {}
        if self.weights.shape[0] != self.interior_points.shape[0]:
            raise ValueError("one weight per interior point required")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    # -- construction -------------------------------------------------------
    @classmethod
    def from_points(cls, interior, weights, exterior=None, exterior_weights=None,
                    diam=None, h=None):
        """Unstructured node set; exterior pairs are summed directly."""
        interior = np.asarray(interior, dtype=float)
        if interior.ndim == 1:
            interior = interior[:, None]
        dim = interior.shape[1]
        ext = np.zeros((0, dim)) if exterior is None else np.asarray(exterior, float).reshape(-1, dim)
        ext_w = np.zeros(0) if exterior_weights is None else np.asarray(exterior_weights, float)
        if ext_w.shape[0] != ext.shape[0]:
            raise ValueError("one weight per exterior point required")
        if np.any(ext_w <= 0):
            raise ValueError("weights must be positive")
        allp = np.vstack([interior, ext])
        if len(allp) > 1 and cKDTree(allp).query_pairs(1e-14):
            raise ValueError("coincident nodes")
        if diam is None:
            diam = _point_diameter(interior)
        if h is None:
            h = float(np.min(cKDTree(allp).query(allp, k=2)[0][:, 1])) if len(allp) > 1 else 1.0
        r_ext = 0.0
        if len(ext):
            # Largest radius R such that every interior point sees exterior nodes out to R.
            r_ext = float(np.min(np.max(np.linalg.norm(interior[:, None, :] - ext[None], axis=2), axis=1)))
        return cls(dim, interior, weights, diam, r_ext, h, {"kind": "points"},
                   None, ext, ext_w)

    # -- sizes and weights --------------------------------------------------
    @property
    def n_interior(self) -> int:
        return self.interior_points.shape[0]

    @property
    def n_exterior(self) -> int:
        if self.lattice is not None:
            return int(self.lattice.interior_mask.size - self.n_interior)
        return self._ext_pts.shape[0]

    @property
    def n_total(self) -> int:
        return self.n_interior + self.n_exterior

    @property
    def exterior_points(self) -> np.ndarray:
        if self._ext_pts is None:
            lat = self.lattice
            idx = np.argwhere(~lat.interior_mask)
            self._ext_pts = lat.coords(idx)
        return self._ext_pts

    @property
    def exterior_weights(self) -> np.ndarray:
        if self._ext_w is None:
            self._ext_w = np.full(self.n_exterior, self.h ** self.dim)
        return self._ext_w

    @property
    def all_points(self) -> np.ndarray:
        return np.vstack([self.interior_points, self.exterior_points])

    @property
    def all_weights(self) -> np.ndarray:
        return np.concatenate([self.weights, self.exterior_weights])

    @property
    def volume(self) -> float:
        """|Ω| as the sum of interior weights."""
        return float(self.weights.sum())

    def weights_for(self, f) -> np.ndarray:
        n = np.shape(f)[0]
        if n == self.n_interior:
            return self.weights
        if n == self.n_total:
            return self.all_weights
        raise ValueError(f"field length {n} matches neither interior ({self.n_interior}) "
                         f"nor all nodes ({self.n_total})")

    def points_for(self, f) -> np.ndarray:
        n = np.shape(f)[0]
        if n == self.n_interior:
            return self.interior_points
        if n == self.n_total:
            return self.all_points
        raise ValueError("field length does not match the domain")

    def extend(self, f) -> np.ndarray:
        """Zero-extend an interior field to all nodes."""
        f = np.asarray(f, dtype=float)
        if f.shape[0] == self.n_total:
            return f
        return np.concatenate([f, np.zeros(self.n_exterior)])

    # -- geometry -------------------------------------------------------------
    def boundary_distance(self, x=None) -> np.ndarray:
        """d(x) = dist(x, ∂Ω), at interior nodes by default."""
        x = self.interior_points if x is None else np.atleast_2d(np.asarray(x, float))
        g = self.geometry
        if g["kind"] == "box":
            b = np.asarray(g["bounds"], float)
            return np.min(np.minimum(x - b[:, 0], b[:, 1] - x), axis=1)
        if g["kind"] == "ball":
            return g["radius"] - np.linalg.norm(x - np.asarray(g["center"]), axis=1)
        # unstructured: distance to the nearest exterior node
        if self.n_exterior == 0:
            return np.full(x.shape[0], np.inf)
        return cKDTree(self.exterior_points).query(x)[0]

    def nearest_node(self, point) -> int:
        """Nearest interior node; ties go to the lowest index."""
        point = np.asarray(point, float).reshape(self.dim)
        d = np.linalg.norm(self.interior_points - point, axis=1)
        dmin = d.min()
        return int(np.flatnonzero(d <= dmin + 1e-12 * max(self.h, 1.0))[0])

    def descriptor(self) -> dict:
        """JSON-ready description (dim, bounds, spacing, R_ext)."""
        g = dict(self.geometry)
        out = {"dim": self.dim, "shape": g.get("kind"), "spacing": self.h, "R_ext": self.r_ext,
               "diam": self.diam, "n_interior": self.n_interior, "n_exterior": self.n_exterior}
        if g.get("kind") == "box":
            out["bounds"] = [list(map(float, b)) for b in g["bounds"]]
        elif g.get("kind") == "ball":
            out["center"] = list(map(float, g["center"]))
            out["radius"] = float(g["radius"])
            out["bounds"] = [[c - g["radius"], c + g["radius"]] for c in g["center"]]
        return out

    def __repr__(self):
        return (f"DiscreteDomain(dim={self.dim}, kind={self.geometry.get('kind')}, h={self.h:g}, "
                f"n_interior={self.n_interior}, n_exterior={self.n_exterior})")


def _point_diameter(pts):
    if len(pts) < 2:
        return 0.0
    if len(pts) > 3000:
        from scipy.spatial import ConvexHull
        if pts.shape[1] == 2:
            pts = pts[ConvexHull(pts).vertices]
        else:
            return float(pts.max() - pts.min())
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def _collar_nodes(r_ext, h):
    return int(math.ceil(r_ext / h - 1e-9))


def box_domain(bounds: Sequence[Sequence[float]], h: float, r_ext_factor: float = 4.0) -> DiscreteDomain:
    """Cell-centred grid on a box ``[a_0,b_0] x ...`` with spacing ``h``."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    dim = bounds.shape[0]
    if h <= 0:
        raise ValueError("spacing must be positive")
    lengths = bounds[:, 1] - bounds[:, 0]
    if np.any(lengths <= 0):
        raise ValueError("empty box")
    counts = np.rint(lengths / h).astype(int)
    if np.any(np.abs(counts * h - lengths) > 1e-9 * max(1.0, lengths.max())):
        raise ValueError("box side lengths must be integer multiples of the spacing")
    diam = float(np.linalg.norm(lengths))
    r_ext = r_ext_factor * diam
    m = _collar_nodes(r_ext, h)
    shape = tuple(int(c + 2 * m) for c in counts)
    origin = bounds[:, 0] - m * h + 0.5 * h
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slice(m, m + c) for c in counts)] = True
    return _lattice_domain(origin, h, shape, mask, diam, r_ext,
                           {"kind": "box", "bounds": bounds.tolist()})


def interval_domain(a: float, b: float, h: float, r_ext_factor: float = 4.0) -> DiscreteDomain:
    return box_domain([[a, b]], h, r_ext_factor)


def ball_domain(center: Sequence[float], radius: float, h: float, r_ext_factor: float = 4.0) -> DiscreteDomain:
    """Lattice through ``center`` restricted to the open ball of given radius."""
    center = np.asarray(center, dtype=float).reshape(-1)
    dim = center.shape[0]
    if radius <= 0 or h <= 0:
        raise ValueError("radius and spacing must be positive")
    diam = 2.0 * radius
    r_ext = r_ext_factor * diam
    k = int(math.floor(radius / h + 1e-9))
    m = _collar_nodes(r_ext, h)
    half = k + m
    shape = (2 * half + 1,) * dim
    origin = center - half * h
    grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    rel = np.stack([(g - half) * h for g in grids], axis=-1)
    mask = np.linalg.norm(rel, axis=-1) < radius - 1e-12 * radius
    return _lattice_domain(origin, h, shape, mask, diam, r_ext,
                           {"kind": "ball", "center": center.tolist(), "radius": float(radius)})


def _lattice_domain(origin, h, shape, mask, diam, r_ext, geometry):
    lat = Lattice(np.asarray(origin, float), float(h), tuple(shape), mask)
    idx = np.argwhere(mask)
    pts = lat.coords(idx)
    w = np.full(len(pts), h ** len(shape))
    dom = DiscreteDomain(len(shape), pts, w, diam, r_ext, h, geometry, lat)
    dom._cache["lattice_index"] = idx
    return dom


def domain_from_descriptor(desc: dict) -> DiscreteDomain:
    """Inverse of :meth:`DiscreteDomain.descriptor` for lattice domains."""
    shape = desc.get("shape", "box")
    h = float(desc["spacing"])
    factor = float(desc.get("r_ext_factor", 4.0))
    if shape == "box":
        return box_domain(desc["bounds"], h, factor)
    if shape == "ball":
        return ball_domain(desc["center"], float(desc["radius"]), h, factor)
    raise ValueError(f"unknown domain shape {shape!r}")


# ---------------------------------------------------------------------------
# measures


@dataclass(eq=False)
class MeasureData:
    """Signed grid measure: atoms at interior nodes plus a nodal density.

    ``atoms`` maps node index to mass; ``density`` is mass per unit volume
    on each interior cell.
    """

    domain: DiscreteDomain
    atoms: dict = field(default_factory=dict)
    density: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.domain.n_interior
        if self.density is None:
            self.density = np.zeros(n)
        self.density = np.asarray(self.density, dtype=float).copy()
        if self.density.shape != (n,):
            raise ValueError("density must have one value per interior node")
        clean = {}
        for i, m in dict(self.atoms).items():
            i = int(i)
            if not 0 <= i < n:
                raise ValueError(f"atom index {i} is not an interior node")
            if m != 0.0:
                clean[i] = clean.get(i, 0.0) + float(m)
        self.atoms = dict(sorted(clean.items()))

    # -- constructors
    @classmethod
    def zero(cls, domain):
        return cls(domain)

    @classmethod
    def dirac(cls, domain, point, mass=1.0):
        return cls(domain, {domain.nearest_node(point): float(mass)})

    @classmethod
    def from_density(cls, domain, density):
        return cls(domain, {}, np.asarray(density, float))

    # -- derived quantities
    @property
    def atom_masses(self) -> np.ndarray:
        a = np.zeros(self.domain.n_interior)
        for i, m in self.atoms.items():
            a[i] += m
        return a

    @property
    def node_masses(self) -> np.ndarray:
        """Combined atom + cell mass at each interior node."""
        return self.atom_masses + self.density * self.domain.weights

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.node_masses).sum())

    @property
    def total_mass(self) -> float:
        return float(self.node_masses.sum())

    def is_zero(self) -> bool:
        return not self.atoms and not np.any(self.density)

    def is_nonnegative(self) -> bool:
        return all(m >= 0 for m in self.atoms.values()) and bool(np.all(self.density >= 0))

    def _select(self, keep, sign):
        atoms = {i: sign * m for i, m in self.atoms.items() if keep[i]}
        dens = np.where(keep, sign * self.density, 0.0)
        return MeasureData(self.domain, atoms, dens)

    def positive(self) -> "MeasureData":
        """μ⁺: nodes whose combined mass is positive."""
        return self._select(self.node_masses > 0, 1.0)

    def negative(self) -> "MeasureData":
        """μ⁻: nodes whose combined mass is negative, sign flipped."""
        return self._select(self.node_masses < 0, -1.0)

    def absolute(self) -> "MeasureData":
        return self.positive() + self.negative()

    def restrict(self, mask) -> "MeasureData":
        mask = np.asarray(mask, bool)
        return self._select(mask, 1.0)

    def scaled(self, t: float) -> "MeasureData":
        return MeasureData(self.domain, {i: t * m for i, m in self.atoms.items()}, t * self.density)

    def __add__(self, other: "MeasureData") -> "MeasureData":
        if other.domain is not self.domain:
            raise ValueError("measures live on different domains")
        atoms = dict(self.atoms)
        for i, m in other.atoms.items():
            atoms[i] = atoms.get(i, 0.0) + m
        return MeasureData(self.domain, atoms, self.density + other.density)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def integrate(self, phi) -> float:
        """∫ φ dμ for a nodal test function φ."""
        return float(np.dot(self.node_masses, np.asarray(phi, float)[: self.domain.n_interior]))


def uniform_ball_density(domain, center, radius, mass=1.0, normalize="nodes"):
    """Constant density on the interior nodes inside B(center, radius).

    With ``normalize="nodes"`` the grid mass equals ``mass`` exactly; with
    ``"volume"`` the density is ``mass/|B|``.
    """
    center = np.asarray(center, float)
    inside = np.linalg.norm(domain.interior_points - center, axis=1) < radius
    if not inside.any():
        raise ValueError("ball contains no interior node")
    dens = np.zeros(domain.n_interior)
    if normalize == "nodes":
        dens[inside] = mass / domain.weights[inside].sum()
    else:
        dens[inside] = mass / (unit_ball_volume(domain.dim) * radius ** domain.dim)
    return MeasureData.from_density(domain, dens)


def mollify(mu: MeasureData, n: int):
    """Spread μ with a truncated Gaussian bump of radius 1/n.

    Returns ``(mu_n, applied)``; when the radius is below the grid spacing
    μ comes back unchanged with ``applied=False``.  Each source node's bump
    is normalized over interior nodes, so total mass is preserved exactly
    and total variation cannot increase.
    """
    if n < 1:
        raise ValueError("smoothing index must be >= 1")
    dom = mu.domain
    radius = 1.0 / n
    if radius < dom.h * (1 - 1e-12):
        warnings.warn(f"bump radius {radius:g} below grid spacing {dom.h:g}; measure left unchanged",
                      RuntimeWarning, stacklevel=2)
        return mu, False
    masses = mu.node_masses
    src = np.flatnonzero(masses)
    if src.size == 0:
        return MeasureData.zero(dom), True
    pts = dom.interior_points
    tree_all = cKDTree(pts)
    tree_src = cKDTree(pts[src])
    pairs = tree_src.sparse_distance_matrix(tree_all, radius, output_type="ndarray")
    rows, cols, dist = pairs["i"], pairs["j"], pairs["v"]
    sigma = radius / 2.0
    b = np.exp(-0.5 * (dist / sigma) ** 2)
    norm = np.bincount(rows, weights=b, minlength=src.size)
    new_mass = np.bincount(cols, weights=b / norm[rows] * masses[src][rows], minlength=dom.n_interior)
    return MeasureData.from_density(dom, new_mass / dom.weights), True
