"""Whitney ball covers and the associated Lipschitz partitions of unity."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .geometry import GridDomain


class CoverError(ValueError):
    pass


def _offset_table(n: int, reach: int):
    """Integer offsets within the cube of half-width ``reach``, sorted by norm."""
    axes = [np.arange(-reach, reach + 1)] * n
    off = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    norms = np.sqrt(np.sum(off.astype(float) ** 2, axis=1))
    order = np.argsort(norms, kind="stable")
    return off[order], norms[order]


class _Stamper:
    """Enumerates grid cells in open balls centred at grid cells."""

    def __init__(self, domain: GridDomain, max_radius: float):
        self.domain = domain
        self.reach = int(np.ceil(max_radius / domain.h)) + 1
        self.off, self.norms = _offset_table(domain.n, self.reach)
        self.shape = np.array(domain.shape)
        self.strides = np.array(domain.inside.strides) // domain.inside.itemsize

    def cells(self, center_idx: np.ndarray, radius: float):
        """Flat indices and distances of grid cells with ``|x - center| < radius``."""
        cnt = int(np.searchsorted(self.norms, radius / self.domain.h, side="left"))
        if cnt > self.off.shape[0]:
            raise CoverError("stamp radius exceeds the offset table")
        idx = center_idx + self.off[:cnt]
        ok = np.all((idx >= 0) & (idx < self.shape), axis=1)
        return idx[ok] @ self.strides, self.norms[:cnt][ok] * self.domain.h


@dataclass(eq=False)
class WhitneyCover:
    """Balls ``B(x_i, c d(x_i, complement))`` produced by the greedy net."""

    domain: GridDomain
    c: float
    centers: np.ndarray        # (k, n) grid multi-indices
    center_points: np.ndarray  # (k, n) coordinates
    radii: np.ndarray          # (k,)
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.radii)

    @property
    def center_flat(self) -> np.ndarray:
        return np.ravel_multi_index(self.centers.T, self.domain.shape)

    def stamper(self, scale: float) -> _Stamper:
        key = ("stamper", scale)
        if key not in self._cache:
            self._cache[key] = _Stamper(self.domain, scale * float(self.radii.max()))
        return self._cache[key]

    def ball_cells(self, i: int, scale: float = 1.0, inside_only: bool = True):
        """Flat grid indices (and distances) of cells in ``scale * B_i``."""
        flat, dist = self.stamper(scale).cells(self.centers[i], scale * self.radii[i])
        if inside_only:
            keep = self.domain.inside.reshape(-1)[flat]
            flat, dist = flat[keep], dist[keep]
        return flat, dist

    def membership(self, scale: float = 1.0) -> sparse.csr_matrix:
        """Sparse (balls x inside cells) indicator of ``scale * B_i``."""
        key = ("membership", scale)
        if key not in self._cache:
            rows, cols = [], []
            comp = self.domain.compact_index
            for i in range(len(self)):
                flat, _ = self.ball_cells(i, scale)
                rows.append(np.full(flat.size, i))
                cols.append(comp[flat])
            r = np.concatenate(rows)
            c = np.concatenate(cols)
            self._cache[key] = sparse.csr_matrix(
                (np.ones(r.size), (r, c)), shape=(len(self), self.domain.n_inside))
        return self._cache[key]

    def overlap_counts(self, scale: float = 1.0) -> np.ndarray:
        """Number of balls ``scale * B_i`` containing each inside cell (compact)."""
        return np.asarray(self.membership(scale).sum(axis=0)).ravel()

    def ball_index_at(self, point) -> int:
        """Index of the ball whose center is nearest to ``point``."""
        diff = self.center_points - np.asarray(point, dtype=float)
        return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))

    def ball_mask(self, i: int, scale: float = 1.0) -> np.ndarray:
        mask = np.zeros(self.domain.inside.size, dtype=bool)
        mask[self.ball_cells(i, scale)[0]] = True
        return mask.reshape(self.domain.shape)

    def union_mask(self, indices, scale: float = 1.0) -> np.ndarray:
        mask = np.zeros(self.domain.inside.size, dtype=bool)
        for i in indices:
            mask[self.ball_cells(int(i), scale)[0]] = True
        return mask.reshape(self.domain.shape)

    def export_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            cols = [f"x{k}" for k in range(self.domain.n)]
            fh.write(",".join(["ball"] + cols + ["r"]) + "\n")
            for i in range(len(self)):
                pt = ",".join(repr(float(v)) for v in self.center_points[i])
                fh.write(f"{i},{pt},{float(self.radii[i])!r}\n")


def build_cover(domain: GridDomain, c: float) -> WhitneyCover:
    """Greedy Whitney net.

    Inside cells are visited by decreasing distance to the complement (ties
    by flat index); a cell becomes a new center unless it already lies in
    ``B_j / 2`` for a selected ball ``B_j``.
    """
    if not 0 < c < 1 / 3:
        raise CoverError("Whitney parameter c must satisfy 0 < c < 1/3")
    if domain.n_inside == 0:
        raise CoverError("domain has no inside cells")
    flat = domain.inside_flat
    d = domain.dist.reshape(-1)[flat]
    order = flat[np.lexsort((flat, -d))]
    dist = domain.dist.reshape(-1)
    half = np.zeros(domain.inside.size, dtype=bool)
    stamper = _Stamper(domain, 0.5 * c * float(d.max()))
    h = domain.h
    chosen = []
    for f in order:
        if half[f]:
            continue
        chosen.append(f)
        rr = 0.5 * c * dist[f]
        if rr > h:
            cells, _ = stamper.cells(np.array(np.unravel_index(f, domain.shape)), rr)
            half[cells] = True
    chosen = np.asarray(chosen, dtype=np.int64)
    centers = np.stack(np.unravel_index(chosen, domain.shape), axis=1)
    pts = domain.coords().reshape(-1, domain.n)[chosen]
    return WhitneyCover(domain=domain, c=float(c), centers=centers, center_points=pts,
                        radii=c * dist[chosen])


# ---------------------------------------------------------------------------
# verification


@dataclass
class CoverReport:
    c: float
    L: float
    hypothesis_ok: bool
    covered: bool
    uncovered_cells: int
    contained: bool
    escaping_balls: int
    sandwich_ok: bool
    sandwich_slack: float
    overlap_ok: bool
    M_obs: int
    overlap_bound: float
    n_balls: int

    @property
    def passed(self) -> bool:
        return self.covered and self.contained and self.sandwich_ok and self.overlap_ok

    def record(self) -> dict:
        out = dict(self.__dict__)
        out["passed"] = self.passed
        return out


def verify_cover(cover: WhitneyCover, L: float = 3.0, overlap_bound: float = 100.0) -> CoverReport:
    """Check cover, dilated containment, distance sandwich and bounded overlap.

    Failures are reported, never raised.  The sandwich passes when its worst
    violation is at most one grid step.
    """
    dom = cover.domain
    h = dom.h
    c = cover.c
    cover_counts = cover.overlap_counts(1.0)
    uncovered = int(np.count_nonzero(cover_counts == 0))
    inside = dom.inside.reshape(-1)
    dist = dom.dist.reshape(-1)
    escaping = 0
    slack = 0.0
    for i in range(len(cover)):
        flat, _ = cover.ball_cells(i, L, inside_only=False)
        if not inside[flat].all():
            escaping += 1
        r = cover.radii[i]
        dd = dist[flat[inside[flat]]]
        lo_v = (1 / c - L) * r - dd
        hi_v = dd - (1 / c + L) * r
        slack = max(slack, float(np.max(lo_v, initial=0.0)), float(np.max(hi_v, initial=0.0)))
    M = int(cover.overlap_counts(L).max())
    return CoverReport(c=c, L=L, hypothesis_ok=c <= 1 / (3 * L) + 1e-15,
                       covered=uncovered == 0, uncovered_cells=uncovered,
                       contained=escaping == 0, escaping_balls=escaping,
                       sandwich_ok=slack <= h, sandwich_slack=slack,
                       overlap_ok=M <= overlap_bound, M_obs=M, overlap_bound=overlap_bound,
                       n_balls=len(cover))


def net_separation_ok(cover: WhitneyCover) -> bool:
    """Each later center lies outside ``B_j / 2`` of every earlier center ``j``."""
    pts = cover.center_points
    r = cover.radii
    from scipy.spatial import cKDTree
    tree = cKDTree(pts)
    for j in range(len(cover)):
        for i in tree.query_ball_point(pts[j], 0.5 * r[j]):
            if i > j and np.linalg.norm(pts[i] - pts[j]) < 0.5 * r[j]:
                return False
    return True


# ---------------------------------------------------------------------------
# partition of unity


@dataclass(eq=False)
class PartitionOfUnity:
    """``phi_i = psi_i / sum_j psi_j`` with piecewise-linear radial bumps ``psi_i``.

    ``phi`` is a sparse (balls x inside cells) matrix.
    """

    cover: WhitneyCover
    phi: sparse.csr_matrix
    nu: float
    K: float
    M_obs: int

    @property
    def t(self) -> float:
        return 18.0 * self.cover.c

    def sums(self) -> np.ndarray:
        return np.asarray(self.phi.sum(axis=0)).ravel()

    def field(self, i: int) -> np.ndarray:
        return self.cover.domain.from_compact(self.phi.getrow(i).toarray().ravel())

    def export_csv(self, path) -> None:
        coo = self.phi.tocoo()
        flat = self.cover.domain.inside_flat
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("ball,cell,phi\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{int(i)},{int(flat[j])},{float(v)!r}\n")


def build_partition(cover: WhitneyCover) -> PartitionOfUnity:
    dom = cover.domain
    comp = dom.compact_index
    rows, cols, vals = [], [], []
    for i in range(len(cover)):
        flat, dist = cover.ball_cells(i, 6.0)
        psi = np.clip(2.0 - dist / (3.0 * cover.radii[i]), 0.0, 1.0)
        keep = psi > 0
        rows.append(np.full(keep.sum(), i))
        cols.append(comp[flat[keep]])
        vals.append(psi[keep])
    r = np.concatenate(rows)
    cidx = np.concatenate(cols)
    v = np.concatenate(vals)
    psi = sparse.csr_matrix((v, (r, cidx)), shape=(len(cover), dom.n_inside))
    total = np.asarray(psi.sum(axis=0)).ravel()
    if np.any(total <= 0):
        raise CoverError("a cell is not covered by any bump: broken cover")
    phi = (psi @ sparse.diags(1.0 / total)).tocsr()
    M = int(np.diff(psi.tocsc().indptr).max())

    m3 = cover.membership(3.0).tocoo()
    nu = float(np.min(np.asarray(phi[m3.row, m3.col]).ravel()))

    K = 0.0
    strides = np.array(dom.inside.strides) // dom.inside.itemsize
    flat = dom.inside_flat
    phic = phi.tocsc()
    for k in range(dom.n):
        nb = comp[flat + strides[k]]
        has = np.flatnonzero(nb >= 0)
        diff = abs(phic[:, has] - phic[:, nb[has]])
        rowmax = np.asarray(diff.max(axis=1).todense()).ravel()
        K = max(K, float(np.max(rowmax * cover.radii / dom.h)))
    return PartitionOfUnity(cover=cover, phi=phi, nu=nu, K=K, M_obs=M)
