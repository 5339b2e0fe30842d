"""Local maximal operator and discrete convolution on grid domains."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .capacity import discrete_gradient
from .geometry import DistanceWeight, GridDomain
from .whitney import PartitionOfUnity, _offset_table, build_cover, build_partition


@dataclass(frozen=True)
class MaximalConfig:
    kappa: float = 0.18
    s: float = 1.5

    def validate(self, p: float | None = None, strict_kappa: bool = False) -> list:
        errs = []
        hi = 0.2 if strict_kappa else 1.0
        if not 0 < self.kappa <= hi:
            errs.append(f"kappa must lie in (0, {hi}]" + (" (maximal boundedness needs kappa < 1/5)" if strict_kappa else ""))
        if not self.s > 1:
            errs.append("s must be > 1")
        if p is not None and not self.s < p:
            errs.append("s must be < p (Poincare exponent below p)")
        return errs


@dataclass(frozen=True)
class ConvolutionConfig:
    t: float = 0.1
    kappa: float = 0.18
    s: float = 1.5
    dilation: float = 1.0  # Poincare dilation constant; 1 on Euclidean grids

    @property
    def c(self) -> float:
        return self.t / 18.0

    @property
    def t_limit(self) -> float:
        return min(1.0, 6 * self.kappa / (3 * self.dilation + 2 * self.kappa))

    def validate(self) -> list:
        errs = []
        if not 0 < self.t < 1:
            errs.append("t must lie in (0, 1)")
        if not 0 < self.kappa <= 1:
            errs.append("kappa must lie in (0, 1]")
        if not self.t < self.t_limit:
            errs.append(f"t must be < 6 kappa / (3 lambda + 2 kappa) = {self.t_limit:.4g}")
        if not self.s > 1:
            errs.append("s must be > 1")
        return errs


def _ladder_lengths(domain: GridDomain, kappa: float | None, max_radius: float | None) -> np.ndarray:
    """Number of admissible radii ``k h`` per cell."""
    if kappa is None:
        kmax = int(np.floor(max_radius / domain.h)) if max_radius is not None else int(max(domain.shape))
        return np.full(domain.shape, kmax, dtype=np.int64)
    K = np.floor(kappa * domain.dist / domain.h).astype(np.int64)
    K[~domain.inside] = 0
    return K


def local_maximal(f: np.ndarray, domain: GridDomain, kappa: float | None = 0.18,
                  max_radius: float | None = None) -> np.ndarray:
    """Centered maximal function of ``|f|`` over the radii ``k h <= kappa d(x)``.

    Averages are over cells with centers in the open ball.  Cells with an
    empty ladder return ``|f(x)|``; outside cells return 0.  With
    ``kappa=None`` the ladder is the same at every cell (up to
    ``max_radius``), giving the uncapped operator on the grid with ``f``
    extended by zero.
    """
    a = np.where(domain.inside, np.abs(np.asarray(f, dtype=float)), 0.0)
    K = _ladder_lengths(domain, kappa, max_radius)
    kmax = int(K.max())
    M = a.copy()
    if kmax >= 1:
        off, norms = _offset_table(domain.n, kmax)
        pad = kmax
        ap = np.pad(a, pad)
        S = np.zeros_like(a)
        j = 0
        for k in range(1, kmax + 1):
            stop = int(np.searchsorted(norms, k, side="left"))
            for o in off[j:stop]:
                S += ap[tuple(slice(pad + oo, pad + oo + m) for oo, m in zip(o, a.shape))]
            j = stop
            avg = S / stop
            sel = K >= k
            np.maximum(M, avg, out=M, where=sel)
    if kappa is not None:
        M[~domain.inside] = 0.0
    return M


# ---------------------------------------------------------------------------
# L^s boundedness


def sample_fields(domain: GridDomain, trials: int, seed: int) -> list:
    """Seeded fields defined in physical coordinates (resolution independent).

    Cycles through smooth Gaussian bumps, block noise on a fixed 1/32
    lattice, and spikes filling a small Whitney-type ball.
    """
    rng = np.random.default_rng(seed)
    pts = domain.coords()
    inside_pts = pts[domain.inside]
    dist_in = domain.dist[domain.inside]
    fields = []
    for k in range(trials):
        kind = k % 3
        anchor = inside_pts[rng.integers(len(inside_pts))]
        # map the anchor to a physical point independent of h
        anchor = np.round(anchor, 3)
        if kind == 0:
            width = rng.uniform(0.02, 0.2)
            r2 = np.sum((pts - anchor) ** 2, axis=-1)
            f = np.exp(-r2 / (2 * width ** 2))
        elif kind == 1:
            cells = np.floor(pts * 32).astype(np.int64)
            key = (cells[..., 0] * 7919 + cells[..., 1] * 104729 + (cells[..., 2] * 1299709 if domain.n == 3 else 0))
            vals = np.random.default_rng([seed, k]).random(4096)
            f = vals[np.mod(key, 4096)]
        else:
            j = int(rng.integers(len(inside_pts)))
            center = np.round(inside_pts[j], 3)
            rad = max(dist_in[j] / 9.0, 0.02)
            f = (np.sqrt(np.sum((pts - center) ** 2, axis=-1)) < rad).astype(float)
        f = np.where(domain.inside, f, 0.0)
        if not f.any():
            f = domain.inside.astype(float)
        fields.append(f)
    return fields


@dataclass
class BoundReport:
    beta: float
    s: float
    kappa: float
    ratios: list
    max_ratio: float
    ceiling: float
    h: float

    @property
    def within_ceiling(self) -> bool:
        return bool(np.isfinite(self.max_ratio) and self.max_ratio <= self.ceiling)

    def record(self) -> dict:
        out = dict(self.__dict__)
        out["within_ceiling"] = self.within_ceiling
        return out


def weighted_ratio(f, Mf, w, s) -> float:
    num = float(np.sum(Mf ** s * w))
    den = float(np.sum(np.abs(f) ** s * w))
    return num / den


def maximal_bound_check(domain: GridDomain, beta: float, s: float, kappa: float,
                        trials: int = 20, seed: int = 0, ceiling: float = 10.0) -> BoundReport:
    """Empirical weighted ``L^s`` operator ratio of the local maximal function."""
    w = DistanceWeight(beta).evaluate(domain)
    ratios = []
    for f in sample_fields(domain, trials, seed):
        Mf = local_maximal(f, domain, kappa)
        ratios.append(weighted_ratio(f, Mf, w, s))
    return BoundReport(beta=beta, s=s, kappa=kappa, ratios=ratios, max_ratio=float(max(ratios)),
                       ceiling=ceiling, h=domain.h)


def relative_change(a: float, b: float) -> float:
    return abs(b - a) / abs(a)


# ---------------------------------------------------------------------------
# discrete convolution


@dataclass(eq=False)
class Convolver:
    """Discrete convolution ``u_t = sum_i phi_i u_{3B_i}`` at one scale."""

    partition: PartitionOfUnity
    _avg: object = field(default=None, repr=False)

    @classmethod
    def build(cls, domain: GridDomain, cfg: ConvolutionConfig) -> "Convolver":
        return cls(build_partition(build_cover(domain, cfg.c)))

    @property
    def domain(self) -> GridDomain:
        return self.partition.cover.domain

    @property
    def averaging(self):
        if self._avg is None:
            from scipy import sparse
            M3 = self.partition.cover.membership(3.0)
            counts = np.asarray(M3.sum(axis=1)).ravel()
            self._avg = (sparse.diags(1.0 / counts) @ M3).tocsr()
        return self._avg

    def ball_averages(self, u: np.ndarray) -> np.ndarray:
        return self.averaging @ self.domain.to_compact(u)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.domain.from_compact(self.partition.phi.T @ self.ball_averages(u))


def discrete_convolution(u: np.ndarray, cfg: ConvolutionConfig, domain: GridDomain,
                         convolver: Convolver | None = None) -> np.ndarray:
    errs = cfg.validate()
    if errs:
        raise ValueError("; ".join(errs))
    conv = convolver or Convolver.build(domain, cfg)
    return conv(u)


@dataclass
class GradReport:
    max_quotient: float
    violations: int
    finite: bool
    h: float
    t: float
    kappa: float
    s: float
    n_cells: int

    def record(self) -> dict:
        return dict(self.__dict__)


def upper_gradient_check(u: np.ndarray, cfg: ConvolutionConfig, domain: GridDomain,
                         convolver: Convolver | None = None, g: np.ndarray | None = None,
                         tol: float = 1e-10) -> GradReport:
    """Cellwise ratio ``|grad u_t| / (M_kappa g^s)^(1/s)`` with ``g = |grad u|``."""
    errs = cfg.validate()
    if errs:
        raise ValueError("; ".join(errs))
    conv = convolver or Convolver.build(domain, cfg)
    if g is None:
        g = discrete_gradient(domain, u)
    ut = conv(u)
    gt = discrete_gradient(domain, ut)
    Mg = local_maximal(g ** cfg.s, domain, cfg.kappa) ** (1.0 / cfg.s)
    ins = domain.inside
    scale = max(float(gt[ins].max()), 1e-300)
    zero = ins & (Mg <= 1e-300)
    violations = int(np.count_nonzero(zero & (gt > tol * scale)))
    pos = ins & ~zero
    q = gt[pos] / Mg[pos]
    mq = float(q.max()) if q.size else 0.0
    return GradReport(max_quotient=mq, violations=violations, finite=bool(np.isfinite(mq)),
                      h=domain.h, t=cfg.t, kappa=cfg.kappa, s=cfg.s, n_cells=int(ins.sum()))
