"""Uniform-grid representations of open sets with exact distance fields.

Cell centers live on the lattice ``h * Z^n``, so dyadic refinements of the
same shape share cell centers.  A cell is inside the domain iff its center
is.  Fields are plain ``ndarray`` objects of ``domain.shape`` that are zero
outside the domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import gamma


class DomainError(ValueError):
    """Raised for shapes or grids that cannot represent a proper open set."""


# ---------------------------------------------------------------------------
# shape descriptors


def _as_point(p, n=None) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(-1)
    if n is not None and a.size != n:
        raise DomainError(f"expected a point in R^{n}, got {p!r}")
    return a


def _norm(pts: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = pts - center
    return np.sqrt(np.einsum("...i,...i->...", diff, diff))


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    kind = "ball"

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def bbox(self):
        c = _as_point(self.center)
        return c - self.radius, c + self.radius

    def inside(self, pts):
        return _norm(pts, _as_point(self.center)) < self.radius

    def dist_complement(self, pts):
        return np.maximum(self.radius - _norm(pts, _as_point(self.center)), 0.0)

    def dist_closure(self, pts):
        return np.maximum(_norm(pts, _as_point(self.center)) - self.radius, 0.0)


@dataclass(frozen=True)
class Annulus:
    center: tuple
    r_inner: float
    r_outer: float

    kind = "annulus"

    def __post_init__(self):
        if not 0 <= self.r_inner < self.r_outer:
            raise DomainError("annulus needs 0 <= r_inner < r_outer")

    @property
    def dim(self) -> int:
        return len(self.center)

    def bbox(self):
        c = _as_point(self.center)
        return c - self.r_outer, c + self.r_outer

    def inside(self, pts):
        rho = _norm(pts, _as_point(self.center))
        return (rho > self.r_inner) & (rho < self.r_outer)

    def dist_complement(self, pts):
        rho = _norm(pts, _as_point(self.center))
        return np.maximum(np.minimum(rho - self.r_inner, self.r_outer - rho), 0.0)

    def dist_closure(self, pts):
        rho = _norm(pts, _as_point(self.center))
        return np.maximum(np.maximum(self.r_inner - rho, rho - self.r_outer), 0.0)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    kind = "box"

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not all(a < b for a, b in zip(self.lo, self.hi)):
            raise DomainError("box needs lo < hi componentwise")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def bbox(self):
        return _as_point(self.lo), _as_point(self.hi)

    def inside(self, pts):
        lo, hi = self.bbox()
        return np.all((pts > lo) & (pts < hi), axis=-1)

    def dist_complement(self, pts):
        lo, hi = self.bbox()
        return np.maximum(np.min(np.minimum(pts - lo, hi - pts), axis=-1), 0.0)

    def dist_closure(self, pts):
        lo, hi = self.bbox()
        gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        return np.sqrt(np.einsum("...i,...i->...", gap, gap))


@dataclass(frozen=True)
class Difference:
    """``base`` minus the closure of ``removed`` (a primitive)."""

    base: object
    removed: object

    kind = "difference"

    def __post_init__(self):
        if not hasattr(self.removed, "dist_closure"):
            raise DomainError("only primitive shapes can be removed")

    @property
    def dim(self) -> int:
        return self.base.dim

    def bbox(self):
        return self.base.bbox()

    def inside(self, pts):
        return self.base.inside(pts) & (self.removed.dist_closure(pts) > 0)

    def dist_complement(self, pts):
        d = np.minimum(self.base.dist_complement(pts), self.removed.dist_closure(pts))
        return np.where(self.inside(pts), d, 0.0)


@dataclass(frozen=True)
class Union:
    parts: tuple

    kind = "union"

    def __post_init__(self):
        if len(self.parts) < 1:
            raise DomainError("union needs at least one part")

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def bbox(self):
        los, his = zip(*(p.bbox() for p in self.parts))
        return np.min(los, axis=0), np.max(his, axis=0)

    def inside(self, pts):
        return np.any([p.inside(pts) for p in self.parts], axis=0)

    def dist_complement(self, pts):
        # max-composition: exact away from concave creases, a lower bound there
        return np.max([p.dist_complement(pts) for p in self.parts], axis=0)


#: any of the shape descriptors above
ShapeSpec = (Ball, Annulus, Box, Difference, Union)


def l_shape(size: float = 1.0, notch: float = 0.5, dim: int = 2):
    """Square ``(0, size)^2`` with the upper-right ``notch`` corner removed."""
    base = Box((0.0,) * dim, (size,) * dim)
    removed = Box((size - notch,) * dim, (size + notch,) * dim)
    return Difference(base, removed)


def punctured_box(size: float = 1.0, hole_center=None, hole_radius: float = 0.05, dim: int = 2):
    """Box ``(0, size)^n`` minus a small closed ball."""
    if hole_center is None:
        hole_center = (size / 2,) * dim
    return Difference(Box((0.0,) * dim, (size,) * dim), Ball(tuple(hole_center), hole_radius))


def shape_from_dict(spec: dict):
    """Build a shape from its dictionary description (scenario files)."""
    kind = spec.get("kind")
    if kind == "ball":
        return Ball(tuple(spec["center"]), float(spec["radius"]))
    if kind == "annulus":
        return Annulus(tuple(spec["center"]), float(spec["r_inner"]), float(spec["r_outer"]))
    if kind == "box":
        return Box(tuple(spec["lo"]), tuple(spec["hi"]))
    if kind == "l_shape":
        return l_shape(float(spec.get("size", 1.0)), float(spec.get("notch", 0.5)), int(spec.get("dim", 2)))
    if kind == "punctured_box":
        return punctured_box(
            float(spec.get("size", 1.0)),
            spec.get("hole_center"),
            float(spec.get("hole_radius", 0.05)),
            int(spec.get("dim", 2)),
        )
    if kind == "difference":
        return Difference(shape_from_dict(spec["base"]), shape_from_dict(spec["removed"]))
    if kind == "union":
        return Union(tuple(shape_from_dict(p) for p in spec["parts"]))
    raise DomainError(f"unknown shape kind {kind!r}")


def shape_to_dict(shape) -> dict:
    if isinstance(shape, Ball):
        return {"kind": "ball", "center": list(shape.center), "radius": shape.radius}
    if isinstance(shape, Annulus):
        return {"kind": "annulus", "center": list(shape.center),
                "r_inner": shape.r_inner, "r_outer": shape.r_outer}
    if isinstance(shape, Box):
        return {"kind": "box", "lo": list(shape.lo), "hi": list(shape.hi)}
    if isinstance(shape, Difference):
        return {"kind": "difference", "base": shape_to_dict(shape.base),
                "removed": shape_to_dict(shape.removed)}
    if isinstance(shape, Union):
        return {"kind": "union", "parts": [shape_to_dict(p) for p in shape.parts]}
    raise DomainError(f"cannot serialise {shape!r}")


# ---------------------------------------------------------------------------
# grid domain


def unit_ball_volume(n: int) -> float:
    """Lebesgue measure of the unit ball in R^n."""
    return math.pi ** (n / 2) / gamma(n / 2 + 1)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GridDomain:
    """An open set sampled on the lattice ``h * (offset + index)``.

    ``inside`` and ``dist`` are read-only arrays of shape ``self.shape``;
    ``dist`` is the Euclidean distance from each cell center to the
    complement and vanishes outside.
    """

    n: int
    h: float
    offset: tuple
    inside: np.ndarray
    dist: np.ndarray
    shape_spec: object = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self) -> tuple:
        return self.inside.shape

    @property
    def extent(self) -> tuple:
        return self.inside.shape

    @property
    def cell_measure(self) -> float:
        return self.h ** self.n

    @property
    def n_inside(self) -> int:
        return int(self._cached("n_inside", lambda: int(self.inside.sum())))

    def _cached(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    @property
    def inside_flat(self) -> np.ndarray:
        """Flat (C-order) grid indices of the inside cells."""
        return self._cached("inside_flat", lambda: _frozen(np.flatnonzero(self.inside)))

    @property
    def compact_index(self) -> np.ndarray:
        """Map flat grid index -> position among inside cells (-1 outside)."""
        def make():
            idx = np.full(self.inside.size, -1, dtype=np.int64)
            idx[self.inside_flat] = np.arange(self.inside_flat.size)
            return _frozen(idx)
        return self._cached("compact_index", make)

    def axis_coords(self, axis: int) -> np.ndarray:
        return (self.offset[axis] + np.arange(self.shape[axis])) * self.h

    def coords(self) -> np.ndarray:
        """Cell-center coordinates, shape ``self.shape + (n,)``."""
        def make():
            axes = [self.axis_coords(k) for k in range(self.n)]
            return _frozen(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1))
        return self._cached("coords", make)

    def point_of(self, index) -> np.ndarray:
        return (np.asarray(self.offset) + np.asarray(index)) * self.h

    def nearest_cell(self, point) -> tuple:
        k = np.rint(np.asarray(point, dtype=float) / self.h).astype(int) - np.asarray(self.offset)
        return tuple(int(v) for v in np.clip(k, 0, np.asarray(self.shape) - 1))

    def to_compact(self, field_: np.ndarray) -> np.ndarray:
        return np.asarray(field_).reshape(-1)[self.inside_flat]

    def from_compact(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.inside.size, dtype=float)
        out[self.inside_flat] = values
        return out.reshape(self.shape)

    def weight(self, beta: float) -> np.ndarray:
        return DistanceWeight(beta).evaluate(self)

    def cells_in_ball(self, center, radius: float, fallback: bool = True) -> np.ndarray:
        """Boolean mask of inside cells whose center lies in the open ball."""
        pts = self.coords()
        mask = self.inside & (_norm(pts, _as_point(center)) < radius)
        if fallback and not mask.any():
            k = self.nearest_cell(center)
            if self.inside[k]:
                mask[k] = True
        return mask


@dataclass(frozen=True)
class DistanceWeight:
    """``w_beta(x) = d(x, complement)^beta`` on inside cells, zero outside."""

    beta: float

    def evaluate(self, domain: GridDomain) -> np.ndarray:
        key = ("weight", float(self.beta))

        def make():
            w = np.zeros(domain.shape)
            d = domain.dist[domain.inside]
            with np.errstate(over="raise"):
                w[domain.inside] = d ** self.beta if self.beta != 0 else 1.0
            return _frozen(w)
        return domain._cached(key, make)


def build_domain(spec, h: float, padding: float = 0.0) -> GridDomain:
    """Sample ``spec`` on the lattice ``h Z^n`` covering its bounding box.

    At least one layer of outside cells surrounds the domain so the
    complement is always represented.
    """
    if not h > 0:
        raise DomainError("grid spacing h must be positive")
    if padding < 0:
        raise DomainError("padding must be non-negative")
    n = spec.dim
    if n not in (2, 3):
        raise DomainError("only dimensions 2 and 3 are supported")
    lo, hi = spec.bbox()
    lo = np.asarray(lo, dtype=float) - padding
    hi = np.asarray(hi, dtype=float) + padding
    k_lo = np.floor(lo / h).astype(int) - 1
    k_hi = np.ceil(hi / h).astype(int) + 1
    ext = tuple(int(v) for v in (k_hi - k_lo + 1))
    axes = [(k_lo[k] + np.arange(ext[k])) * h for k in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = np.asarray(spec.inside(pts), dtype=bool)
    if not inside.any():
        raise DomainError("empty interior after discretization")
    # complement must be visible on the grid boundary layer
    border = np.ones(ext, dtype=bool)
    border[tuple(slice(1, -1) for _ in range(n))] = False
    if inside[border].any():
        raise DomainError("shape complement not represented on the grid")
    dist = np.where(inside, spec.dist_complement(pts), 0.0)
    if np.any(dist[inside] <= 0):
        # a center inside an open set has positive distance; guard rounding
        dist[inside] = np.maximum(dist[inside], np.finfo(float).tiny)
    dom = GridDomain(n=n, h=float(h), offset=tuple(int(v) for v in k_lo),
                     inside=_frozen(inside), dist=_frozen(dist), shape_spec=spec)
    dom._cache["coords"] = _frozen(pts)
    return dom


def distance_to_set(domain: GridDomain, E: np.ndarray) -> np.ndarray:
    """Euclidean distance from every cell center to the nearest center in ``E``.

    Exact (Maurer-type Euclidean distance transform on the lattice).
    """
    E = np.asarray(E, dtype=bool)
    if not E.any():
        raise DomainError("E must be nonempty")
    return ndimage.distance_transform_edt(~E, sampling=domain.h)


def measure_of_ball(domain: GridDomain, x, r: float, mode: str = "ambient") -> float:
    """Measure of ``B(x, r)``: exact Lebesgue (``ambient``) or cell count (``counted``)."""
    if mode == "ambient":
        return unit_ball_volume(domain.n) * r ** domain.n
    if mode == "counted":
        center = domain.point_of(x) if _is_index(x, domain) else _as_point(x)
        count = np.count_nonzero(_norm(domain.coords(), center) < r)
        return count * domain.cell_measure
    raise ValueError(f"unknown measure mode {mode!r}")


def _is_index(x, domain) -> bool:
    return isinstance(x, tuple) and len(x) == domain.n and all(isinstance(v, (int, np.integer)) for v in x)


def export_distance_csv(domain: GridDomain, path) -> None:
    """Row-major CSV of the distance field with an ``n, h, extent`` header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={domain.n},h={domain.h!r},extent={'x'.join(map(str, domain.extent))}\n")
        names = [f"i{k}" for k in range(domain.n)] + [f"x{k}" for k in range(domain.n)]
        fh.write(",".join(names + ["inside", "d"]) + "\n")
        pts = domain.coords().reshape(-1, domain.n)
        idx = np.indices(domain.shape).reshape(domain.n, -1).T
        ins = domain.inside.reshape(-1)
        d = domain.dist.reshape(-1)
        for k in range(ins.size):
            row = [str(v) for v in idx[k]] + [repr(float(v)) for v in pts[k]]
            fh.write(",".join(row + [str(int(ins[k])), repr(float(d[k]))]) + "\n")
