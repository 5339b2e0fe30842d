"""Quasiadditivity scans, Whitney-ball capacity bounds and the decay example."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .capacity import (CapacityError, SolverConfig, ball_test_upper_bound, capacity_evaluator,
                       weighted_p_energy)
from .geometry import Ball, GridDomain, build_domain, unit_ball_volume
from .hardy_sobolev import AscentConfig, HSParams, divergence_scan
from .whitney import WhitneyCover, build_cover

log = logging.getLogger(__name__)

C_LIMIT = 1.0 / 53.0  # Whitney parameter must stay below this for the equivalence on grids


def _floor(tol: float, reference: float) -> float:
    return 10.0 * tol * reference


def ball_reference(r: float, n: int, params: HSParams, mode: str = "ambient") -> float:
    """``mu(B) r^(beta - p)``, or ``r^(n + beta - p)`` in Q-regular mode."""
    if mode == "qregular":
        return r ** (n + params.beta - params.p)
    return unit_ball_volume(n) * r ** n * r ** (params.beta - params.p)


# ---------------------------------------------------------------------------
# ratio over Whitney pieces


@dataclass
class QuasiaddSample:
    label: str
    n_cells: int
    n_pieces: int
    cap: float
    piece_sum: float
    ratio: float
    degenerate: bool

    def record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ScanResult:
    samples: list
    max_ratio: float
    degenerate: int
    max_cap: float

    def record(self) -> dict:
        return {"max_ratio": self.max_ratio, "degenerate": self.degenerate, "max_cap": self.max_cap,
                "samples": [s.record() for s in self.samples]}


def _summarise(samples) -> ScanResult:
    finite = [s.ratio for s in samples if not s.degenerate]
    return ScanResult(samples=samples, max_ratio=float(max(finite)) if finite else math.nan,
                      degenerate=sum(s.degenerate for s in samples),
                      max_cap=float(max((getattr(s, "cap", None) or getattr(s, "union_cap") for s in samples), default=0.0)))


def quasiadd_candidates(cover: WhitneyCover, count: int, seed: int) -> list:
    """Seeded E-candidates: cell clusters, unions of Whitney balls, ``{d >= s}``.

    Sample ``k`` depends only on ``(seed, k)`` so a doubled budget extends
    the same family.
    """
    dom = cover.domain
    pts = dom.coords()
    from .capacity import collar_mask
    collar = collar_mask(dom, dom.h)
    dmax = float(dom.dist[dom.inside].max())
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        kind = k % 3
        if kind == 0:
            E = np.zeros(dom.shape, dtype=bool)
            for _ in range(int(rng.integers(1, 4))):
                x = _random_inside_point(dom, rng)
                E |= dom.cells_in_ball(x, 0.02)
            label = f"cluster{k}"
        elif kind == 1:
            idx = [cover.ball_index_at(_random_inside_point(dom, rng)) for _ in range(int(rng.integers(2, 6)))]
            idx = sorted(set(idx))
            E = cover.union_mask(idx)
            label = f"balls{k}:" + "-".join(map(str, idx))
        else:
            s = float(rng.uniform(0.6, 0.9))
            E = dom.inside & (dom.dist >= s * dmax)
            label = f"superlevel{k}:{s:.3f}"
        E &= ~collar
        if E.any():
            out.append((label, E))
    return out


def _random_inside_point(dom: GridDomain, rng) -> np.ndarray:
    lo = np.array([dom.axis_coords(k)[0] for k in range(dom.n)])
    hi = np.array([dom.axis_coords(k)[-1] for k in range(dom.n)])
    for _ in range(10000):
        x = np.round(rng.uniform(lo, hi), 4)
        k = dom.nearest_cell(x)
        if dom.inside[k] and dom.dist[k] > 2 * dom.h:
            return x
    raise ValueError("could not sample an inside point")


def quasiadd_scan(domain: GridDomain, params: HSParams, cover: WhitneyCover, candidates,
                  solver: SolverConfig | None = None, collar_width: float | None = None,
                  mode: str = "ambient") -> ScanResult:
    """``sum_i cap(E cap B_i)^{q/p} / cap(E)^{q/p}`` for each candidate ``E``."""
    solver = solver or SolverConfig()
    cap = capacity_evaluator(domain, params.p, params.beta, solver, collar_width)
    M1 = cover.membership(1.0).tocsc()
    e = params.q / params.p
    samples = []
    for label, E in candidates:
        cols = domain.compact_index[np.flatnonzero(E.reshape(-1))]
        balls = np.unique(M1[:, cols].tocoo().row)
        try:
            cE = cap(E)
            pieces = []
            for i in balls:
                mask = np.zeros(domain.inside.size, dtype=bool)
                bc, _ = cover.ball_cells(int(i))
                mask[bc] = True
                piece = mask.reshape(domain.shape) & E
                pieces.append(cap(piece))
        except CapacityError as exc:
            log.warning("skipping sample %s: %s", label, exc)
            continue
        ref = max(ball_reference(float(cover.radii[i]), domain.n, params, mode) for i in balls)
        total = float(sum(pc ** e for pc in pieces))
        degenerate = cE <= _floor(solver.tol, ref)
        ratio = math.inf if degenerate else total / cE ** e
        samples.append(QuasiaddSample(label=label, n_cells=int(E.sum()), n_pieces=len(pieces), cap=cE,
                                      piece_sum=total, ratio=ratio, degenerate=bool(degenerate)))
    return _summarise(samples)


# ---------------------------------------------------------------------------
# ball-index families


@dataclass
class WeakSample:
    indices: list
    caps: list
    union_cap: float
    ratio: float
    subadditive: bool
    degenerate: bool

    def record(self) -> dict:
        return dict(self.__dict__)


def index_families(cover: WhitneyCover, count: int, seed: int, max_size: int = 8) -> list:
    """Seeded index sets chosen through physical points (nearest ball center)."""
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        size = int(rng.integers(1, max_size + 1))
        idx = {cover.ball_index_at(_random_inside_point(cover.domain, rng)) for _ in range(size)}
        out.append(sorted(idx))
    return out


def weak_quasiadd_scan(domain: GridDomain, params: HSParams, cover: WhitneyCover, families,
                       solver: SolverConfig | None = None, collar_width: float | None = None,
                       mode: str = "ambient") -> ScanResult:
    """``sum_{i in I} cap(B_i)^{q/p} / cap(union B_i)^{q/p}`` per index set."""
    solver = solver or SolverConfig()
    cap = capacity_evaluator(domain, params.p, params.beta, solver, collar_width)
    e = params.q / params.p
    slack = 2 * solver.tol
    memo = {}
    samples = []
    for I in families:
        try:
            caps = []
            for i in I:
                if i not in memo:
                    memo[i] = cap(cover.ball_mask(i))
                caps.append(memo[i])
            union = caps[0] if len(I) == 1 else cap(cover.union_mask(I))
        except CapacityError as exc:
            log.warning("skipping family %s: %s", I, exc)
            continue
        ref = max(ball_reference(float(cover.radii[i]), domain.n, params, mode) for i in I)
        degenerate = union <= _floor(solver.tol, ref)
        ratio = math.inf if degenerate else float(sum(c ** e for c in caps)) / union ** e
        sub = union <= sum(caps) * (1 + slack)
        samples.append(WeakSample(indices=[int(i) for i in I], caps=caps, union_cap=union, ratio=ratio,
                                  subadditive=bool(sub), degenerate=bool(degenerate)))
    return _summarise(samples)


def all_subadditive(res: ScanResult) -> bool:
    return all(s.subadditive for s in res.samples)


# ---------------------------------------------------------------------------
# ball bounds


@dataclass
class BallBoundRecord:
    ball: int
    center: list
    radius: float
    cap: float
    reference: float
    lower_ratio: float
    upper_ratio: float

    def record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BallBounds:
    records: list
    spread: float
    min_lower: float
    max_lower: float
    consistent: bool

    def record(self) -> dict:
        return {"spread": self.spread, "min_lower": self.min_lower, "max_lower": self.max_lower,
                "consistent": self.consistent, "records": [r.record() for r in self.records]}


def sample_balls(cover: WhitneyCover, count: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return sorted({cover.ball_index_at(_random_inside_point(cover.domain, rng)) for _ in range(count)})


def ball_bounds_scan(domain: GridDomain, params: HSParams, cover: WhitneyCover, balls=None,
                     solver: SolverConfig | None = None, collar_width: float | None = None,
                     mode: str = "ambient", tol: float = 1e-9) -> BallBounds:
    """Ball capacities against ``mu(B) r^(beta - p)`` (lower) and the test-function bound (upper)."""
    solver = solver or SolverConfig()
    cap = capacity_evaluator(domain, params.p, params.beta, solver, collar_width)
    balls = range(len(cover)) if balls is None else balls
    recs = []
    for i in balls:
        i = int(i)
        r = float(cover.radii[i])
        E = domain.cells_in_ball(cover.center_points[i], r)
        try:
            ci = cap(E)
        except CapacityError as exc:
            log.warning("skipping ball %d: %s", i, exc)
            continue
        ref = ball_reference(r, domain.n, params, mode)
        up = ball_test_upper_bound(cover, i, params.p, params.beta, collar_width)
        recs.append(BallBoundRecord(ball=i, center=[float(v) for v in cover.center_points[i]], radius=r,
                                    cap=ci, reference=ref, lower_ratio=ci / ref, upper_ratio=up / ref))
    lows = [r.lower_ratio for r in recs]
    lo, hi = (min(lows), max(lows)) if lows else (math.nan, math.nan)
    spread = hi / lo if lows and lo > 0 else math.inf
    ok = all(r.lower_ratio <= r.upper_ratio * (1 + tol) for r in recs)
    return BallBounds(records=recs, spread=spread, min_lower=lo, max_lower=hi, consistent=ok)


def geometric_ball_caps(balls, domain: GridDomain, params: HSParams, solver: SolverConfig | None = None,
                        collar_width: float | None = None) -> list:
    """Capacities of fixed geometric balls ``(center, r)`` on ``domain``."""
    cap = capacity_evaluator(domain, params.p, params.beta, solver, collar_width)
    return [cap(domain.cells_in_ball(c, r)) for c, r in balls]


# ---------------------------------------------------------------------------
# decay example on the unit disc


@dataclass
class DecayFit:
    js: list
    energies: list
    slope: float | None
    expected: float
    h: float
    p: float
    beta: float

    def record(self) -> dict:
        return dict(self.__dict__)


def ramp_function(domain: GridDomain, j: int) -> np.ndarray:
    """1 on ``B(0, 1 - 2^-j)``, 0 outside ``B(0, 1 - 2^-(j+1))``, radial linear ramp between."""
    rho = np.sqrt(np.sum(domain.coords() ** 2, axis=-1))
    a, b = 1.0 - 2.0 ** -j, 1.0 - 2.0 ** -(j + 1)
    u = np.clip((b - rho) / (b - a), 0.0, 1.0)
    u[~domain.inside] = 0.0
    return u


def example_62_sequence(p: float, beta: float, js, h: float, dim: int = 2,
                        domain: GridDomain | None = None) -> DecayFit:
    """Energies of the radial ramps ``u_j`` on the unit ball and their log2 slope in ``j``."""
    js = list(js)
    if not p > 1:
        raise ValueError("requires 1 < p")
    if beta < 0:
        raise ValueError("requires beta >= 0")
    if js and 2.0 ** (-max(js) - 1) < 4 * h:
        raise ValueError(f"j_max={max(js)} too large for h={h}: need 2^-(j+1) >= 4h")
    dom = domain or build_domain(Ball((0.0,) * dim, 1.0), h)
    en = [weighted_p_energy(dom, ramp_function(dom, j), p, beta) for j in js]
    slope = float(np.polyfit(js, np.log2(en), 1)[0]) if len(js) >= 2 else None
    return DecayFit(js=js, energies=en, slope=slope, expected=-(1.0 - p + beta), h=h, p=p, beta=beta)


# ---------------------------------------------------------------------------
# equivalence experiment


@dataclass
class EquivalenceReport:
    shape: dict
    params: dict
    c: float
    hs: list
    rayleigh: dict
    quasiadd: dict
    weak: dict
    ball_bounds: dict
    conditions: dict
    verdict: str
    consistent: bool
    rules: dict

    def record(self) -> dict:
        return dict(self.__dict__)


def _trend(values, bounded_tol=0.30, fail_factor=1.5, decreasing=False) -> str:
    """Classify a refinement/budget ladder as bounded, failing or undecided."""
    v = [x for x in values if math.isfinite(x)]
    if len(v) < 2:
        return "undecided"
    if decreasing:
        v = [1.0 / x if x > 0 else math.inf for x in v]
    steps = [b / a for a, b in zip(v, v[1:])]
    if all(s >= fail_factor for s in steps):
        return "failing"
    if all(abs(s - 1.0) < bounded_tol for s in steps):
        return "bounded"
    return "undecided"


def equivalence_experiment(shape, params: HSParams, h: float, c: float = 1 / 54, seed: int = 0,
                           budget: int = 10, solver: SolverConfig | None = None,
                           ascent: AscentConfig | None = None, mode: str = "ambient") -> EquivalenceReport:
    """Evaluate every condition of the equivalence on one shape.

    Runs at ``2h`` and ``h`` (scans) and at ``4h, 2h, h`` (quotient
    supremum); sample families at the finer grid are evaluated at ``budget``
    and ``2 budget`` (the first half reused).  A family is bounded when
    every step changes its max by less than 30% and failing when every step
    grows it by 1.5 or more.  The same rule classifies the quotient
    supremum ladder.
    """
    from .geometry import shape_to_dict
    solver = solver or SolverConfig(method="auto")
    ascent = ascent or AscentConfig()
    if c >= C_LIMIT:
        log.warning("c=%g is not below 1/53; the equivalence hypothesis is not met", c)
    div = divergence_scan(shape, params, [4 * h, 2 * h, h], ascent, mode)
    qa_max, wk_max, lows, caps, wk_sub = [], [], [], [], True
    qa_rec = wk_rec = bb_rec = None
    for hh in (2 * h, h):
        dom = build_domain(shape, hh)
        cover = build_cover(dom, c)
        sizes = (budget, 2 * budget) if hh == h else (budget,)
        fam = quasiadd_candidates(cover, max(sizes), seed)
        qa = quasiadd_scan(dom, params, cover, fam, solver, mode=mode)
        fams = index_families(cover, max(sizes), seed)
        wk = weak_quasiadd_scan(dom, params, cover, fams, solver, mode=mode)
        wk_sub = wk_sub and all_subadditive(wk)
        for m in sizes:
            qa_max.append(_summarise(qa.samples[:m]).max_ratio)
            wk_max.append(_summarise(wk.samples[:m]).max_ratio)
        bb = ball_bounds_scan(dom, params, cover, sample_balls(cover, budget, seed), solver, mode=mode)
        lows.append(bb.min_lower)
        caps.append(qa.max_cap)
        qa_rec, wk_rec, bb_rec = qa.record(), wk.record(), bb.record()
    hs_cond = {"failing": "fails", "bounded": "holds"}.get(_trend(div.values), "undecided")
    low_trend = _trend(lows, decreasing=True)
    lower = {"failing": "fails", "bounded": "holds"}.get(low_trend, "undecided")
    cap_trend = _trend(caps, decreasing=True)
    if cap_trend == "failing" or qa_rec["degenerate"]:
        qa_cond = "vacuous"
    else:
        qa_cond = {"failing": "fails", "bounded": "holds"}.get(_trend(qa_max), "undecided")
    wk_cond = {"failing": "fails", "bounded": "holds"}.get(_trend(wk_max), "undecided")
    if cap_trend == "failing":
        wk_cond = "vacuous"
    conditions = {"hardy_sobolev": hs_cond, "quasiadditivity": qa_cond, "weak_quasiadditivity": wk_cond,
                  "ball_lower_bound": lower}
    if hs_cond == "holds":
        consistent = lower == "holds" and qa_cond == "holds" and wk_cond == "holds"
    elif hs_cond == "fails":
        consistent = lower == "fails" or qa_cond == "fails" or wk_cond == "fails"
    else:
        consistent = False
    words = {"holds": "holds", "fails": "fails", "vacuous": "vacuous", "undecided": "undecided"}
    verdict = (f"HS {words[hs_cond]}; ball lower bound {words[lower]}; quasiadd {words[qa_cond]}; "
               f"weak quasiadd {words[wk_cond]}; " + ("consistent" if consistent else "inconsistent or undecided"))
    return EquivalenceReport(
        shape=shape_to_dict(shape), params=dict(p=params.p, q=params.q, beta=params.beta), c=c,
        hs=[4 * h, 2 * h, h], rayleigh=div.record(),
        quasiadd={"max_ladder": qa_max, "cap_ladder": caps, "last": qa_rec},
        weak={"max_ladder": wk_max, "subadditive": wk_sub, "last": wk_rec},
        ball_bounds={"min_lower_ladder": lows, "last": bb_rec},
        conditions=conditions, verdict=verdict, consistent=consistent,
        rules={"bounded_change": 0.30, "failing_growth": 1.5})
