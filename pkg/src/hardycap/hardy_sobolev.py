"""Hardy-Sobolev functionals, Maz'ya ratio scans and the level-set truncation check."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .capacity import (CapacityError, CapacityProblem, SolverConfig, _transposed_operators,
                       ball_test_function, gradient_operators, lipschitz_test_function,
                       solve_capacity, weighted_p_energy)
from .geometry import DistanceWeight, GridDomain, unit_ball_volume

log = logging.getLogger(__name__)

MODES = ("ambient", "qregular")


@dataclass(frozen=True)
class HSParams:
    p: float = 2.0
    q: float = 2.0
    beta: float = 0.0

    def validate(self, n: int | None = None, qregular: bool = False) -> list:
        errs = []
        if not self.p > 1:
            errs.append(f"requires 1 < p (got p={self.p})")
        if not self.q >= self.p:
            errs.append(f"requires p <= q (got p={self.p}, q={self.q})")
        if qregular and n is not None and self.p < n and self.q > n * self.p / (n - self.p):
            errs.append(f"requires q <= np/(n-p) = {n * self.p / (n - self.p):.4g} for Q-regular runs")
        return errs


def lhs_density(domain: GridDomain, params: HSParams, mode: str = "ambient") -> np.ndarray:
    """Weight ``a(x)`` with ``hs_lhs(u)^q = sum |u|^q a h^n``; zero outside."""
    p, q, beta, n = params.p, params.q, params.beta, domain.n
    d = domain.dist
    ins = domain.inside & (d > 0)
    a = np.zeros(domain.shape)
    dd = d[ins]
    if mode == "ambient":
        mu = unit_ball_volume(n) * dd ** n
        a[ins] = dd ** (-(q / p) * (p - beta)) * mu ** ((q - p) / p)
    elif mode == "qregular":
        a[ins] = dd ** ((q / p) * (n - p + beta) - n)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return a


def hs_lhs(u: np.ndarray, params: HSParams, domain: GridDomain, mode: str = "ambient") -> float:
    a = lhs_density(domain, params, mode)
    val = float(np.sum(np.abs(u[domain.inside]) ** params.q * a[domain.inside]) * domain.cell_measure)
    return val ** (1.0 / params.q)


def hs_rhs(u: np.ndarray, params: HSParams, domain: GridDomain) -> float:
    return weighted_p_energy(domain, u, params.p, params.beta) ** (1.0 / params.p)


def hs_quotient(u, params, domain, mode="ambient") -> float:
    r = hs_rhs(u, params, domain)
    return hs_lhs(u, params, domain, mode) / r if r > 0 else math.inf


def set_integral(E: np.ndarray, params: HSParams, domain: GridDomain, mode: str = "ambient") -> float:
    """``int_E`` of the left-hand weight (the Maz'ya numerator)."""
    a = lhs_density(domain, params, mode)
    return float(np.sum(a[E & domain.inside]) * domain.cell_measure)


# ---------------------------------------------------------------------------
# Rayleigh-type ascent


@dataclass(frozen=True)
class AscentConfig:
    budget: int = 200
    doublings: int = 2
    eps: float = 1e-8
    collar_width: float | None = None
    random_inits: int = 2
    seed: int = 0
    growth_threshold: float = 1.5
    stable_threshold: float = 0.05


@dataclass
class RayleighResult:
    value: float
    witness: np.ndarray = field(repr=False)
    history: list          # best quotient after budget, 2 budget, 4 budget, ...
    budgets: list
    growth: list
    verdict: str           # "diverging", "bounded" or "undecided"
    init: str

    def record(self) -> dict:
        return {"value": self.value, "history": self.history, "budgets": self.budgets,
                "growth": self.growth, "verdict": self.verdict, "init": self.init}


class _Quotient:
    """``log hs_lhs - log hs_rhs`` on compact vectors, with gradient."""

    def __init__(self, domain: GridDomain, params: HSParams, mode: str, eps: float):
        self.D = gradient_operators(domain)
        self.DT = _transposed_operators(domain)
        self.a = domain.to_compact(lhs_density(domain, params, mode)) * domain.cell_measure
        self.w = domain.to_compact(DistanceWeight(params.beta).evaluate(domain)) * domain.cell_measure
        self.p, self.q = params.p, params.q
        self.eps2 = eps * eps if params.p < 2 else 0.0

    def value_grad(self, u):
        p, q = self.p, self.q
        au = np.abs(u)
        A = float(np.dot(self.a, au ** q))
        G = [D @ u for D in self.D]
        s2 = sum(g * g for g in G) + self.eps2
        B = float(np.dot(self.w, s2 ** (p / 2)))
        if A <= 0 or B <= 0:
            return -math.inf, None
        gA = q * self.a * au ** (q - 1) * np.sign(u)
        coef = p * self.w * s2 ** ((p - 2) / 2)
        gB = sum(DT @ (coef * g) for DT, g in zip(self.DT, G))
        return math.log(A) / q - math.log(B) / p, gA / (q * A) - gB / (p * B)


def _ascend(obj: _Quotient, u: np.ndarray, free: np.ndarray, checkpoints: list):
    """Projected gradient ascent with Armijo backtracking; best value at checkpoints."""
    u = np.where(free, u, 0.0)
    u /= np.max(np.abs(u))
    f, g = obj.value_grad(u)
    if g is None:
        return None
    step = 1.0
    out = []
    it = 0
    for stop in checkpoints:
        while it < stop:
            it += 1
            g = np.where(free, g, 0.0)
            gn = float(np.dot(g, g))
            if gn == 0:
                it = stop
                break
            while step > 1e-30:
                v = u + step * g
                v /= np.max(np.abs(v))
                fv, gv = obj.value_grad(v)
                if gv is not None and fv >= f + 1e-4 * step * gn:
                    u, f, g = v, fv, gv
                    step *= 2.0
                    break
                step *= 0.5
        out.append((math.exp(f), u.copy()))
    return out


def _initialisations(domain: GridDomain, collar: np.ndarray, cfg: AscentConfig):
    inits = []
    ins = domain.inside
    d = domain.dist
    k = np.unravel_index(int(np.argmax(np.where(ins, d, -1))), domain.shape)
    x0 = domain.point_of(k)
    dmax = float(d[k])
    E = domain.cells_in_ball(x0, 0.25 * dmax)
    try:
        inits.append(("lipschitz", lipschitz_test_function(CapacityProblem(domain, E, collar_width=cfg.collar_width))))
    except CapacityError:
        pass
    inits.append(("ball", ball_test_function(domain, x0, dmax / 9.0, 3.0, collar)))
    inits.append(("distance", np.where(ins, d, 0.0)))
    rng = np.random.default_rng(cfg.seed)
    pts = domain.coords()
    for j in range(cfg.random_inits):
        f = np.zeros(domain.shape)
        for _ in range(4):
            c = pts[ins][rng.integers(int(ins.sum()))]
            wdt = rng.uniform(0.05, 0.3) * dmax
            f += rng.uniform(0.2, 1.0) * np.exp(-np.sum((pts - c) ** 2, axis=-1) / (2 * wdt * wdt))
        inits.append((f"random{j}", f))
    return inits


def _top_eigen(domain: GridDomain, params: HSParams, free: np.ndarray, mode: str):
    """Exact discrete supremum of the quotient for ``p = q = 2``.

    The squared quotient is the largest generalized eigenvalue of the
    diagonal left-hand form against the weighted graph Laplacian on free
    cells; computed by shift-invert at zero on the symmetrically scaled
    Laplacian.
    """
    from scipy import sparse
    from scipy.sparse.linalg import eigsh
    w = domain.to_compact(DistanceWeight(params.beta).evaluate(domain))
    B = sum(D.T @ sparse.diags(w) @ D for D in gradient_operators(domain)).tocsr()[free][:, free]
    a = domain.to_compact(lhs_density(domain, params, mode))[free]
    s = sparse.diags(1.0 / np.sqrt(a))
    C = (s @ B @ s).tocsc()
    mu, vec = eigsh(C, k=1, sigma=0, which="LM")
    u = np.zeros(domain.n_inside)
    v = vec[:, 0] / np.sqrt(a)
    u[free] = v / v[np.argmax(np.abs(v))]
    return 1.0 / math.sqrt(float(mu[0])), u


def rayleigh_lower_bound(domain: GridDomain, params: HSParams, cfg: AscentConfig | None = None,
                         mode: str = "ambient", method: str = "auto") -> RayleighResult:
    """Best ``hs_lhs / hs_rhs`` on one grid, a lower bound for the best constant.

    ``method="eigen"`` (default for ``p = q = 2``) returns the exact discrete
    supremum.  ``method="ascent"`` runs projected gradient ascent from several
    initialisations to ``budget * 2**k`` iterations, ``k = 0..doublings``;
    the history holds the best value at each checkpoint.
    """
    cfg = cfg or AscentConfig()
    errs = params.validate()
    if errs:
        raise ValueError("; ".join(errs))
    from .capacity import collar_mask
    collar = collar_mask(domain, cfg.collar_width or domain.h)
    free = domain.to_compact(domain.inside & ~collar)
    if not free.any():
        raise ValueError("no free cells outside the collar")
    if method == "auto":
        method = "eigen" if params.p == 2 and params.q == 2 else "ascent"
    if method == "eigen":
        if not (params.p == 2 and params.q == 2):
            raise ValueError("eigen method requires p = q = 2")
        val, u = _top_eigen(domain, params, free, mode)
        return RayleighResult(value=val, witness=domain.from_compact(u), history=[val], budgets=[0],
                              growth=[], verdict="exact", init="eigen")
    obj = _Quotient(domain, params, mode, cfg.eps)
    budgets = [cfg.budget * 2 ** k for k in range(cfg.doublings + 1)]
    best_hist = None
    best_name = ""
    best_u = None
    for name, f in _initialisations(domain, collar, cfg):
        u0 = domain.to_compact(f)
        if not np.any(u0[free]):
            continue
        res = _ascend(obj, u0, free, budgets)
        if res is None:
            continue
        hist = [v for v, _ in res]
        if best_hist is None or hist[-1] > best_hist[-1]:
            best_hist, best_name, best_u = hist, name, res[-1][1]
    if best_hist is None:
        raise ValueError("all initialisations are degenerate (zero gradient energy)")
    growth = [b / a for a, b in zip(best_hist, best_hist[1:])]
    return RayleighResult(value=best_hist[-1], witness=domain.from_compact(best_u), history=best_hist,
                          budgets=budgets, growth=growth, verdict=growth_verdict(growth, cfg), init=best_name)


def growth_verdict(growth, cfg: AscentConfig) -> str:
    """``diverging`` if every growth factor reaches the threshold, ``bounded``
    if the last one changes the value by less than ``stable_threshold``."""
    if len(growth) >= 2 and all(g >= cfg.growth_threshold for g in growth):
        return "diverging"
    if growth and abs(growth[-1] - 1.0) < cfg.stable_threshold:
        return "bounded"
    return "undecided"


@dataclass
class DivergenceReport:
    hs: list
    values: list
    growth: list
    verdict: str
    method: str

    def record(self) -> dict:
        return dict(self.__dict__)


def divergence_scan(shape, params: HSParams, hs, cfg: AscentConfig | None = None,
                    mode: str = "ambient", method: str = "auto") -> DivergenceReport:
    """Quotient supremum along a ladder of grid steps, each half the previous.

    Each halving of ``h`` doubles the resolution budget; sustained growth by
    ``growth_threshold`` per halving signals that no inequality holds in the
    continuum, a last change below ``stable_threshold`` signals a bounded
    constant.
    """
    from .geometry import build_domain
    cfg = cfg or AscentConfig()
    vals = []
    used = method
    for h in hs:
        r = rayleigh_lower_bound(build_domain(shape, h), params, cfg, mode, method)
        vals.append(r.value)
        used = r.init if r.init == "eigen" else "ascent"
    growth = [b / a for a, b in zip(vals, vals[1:])]
    return DivergenceReport(hs=list(hs), values=vals, growth=growth, verdict=growth_verdict(growth, cfg),
                            method=used)


# ---------------------------------------------------------------------------
# Maz'ya scans


@dataclass
class MazyaSample:
    label: str
    n_cells: int
    lhs: float
    cap: float
    ratio: float
    degenerate: bool

    def record(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MazyaScan:
    samples: list
    running_max: list

    @property
    def max_ratio(self) -> float:
        return self.running_max[-1] if self.running_max else 0.0

    @property
    def failure(self) -> bool:
        return any(s.degenerate and s.lhs > 0 for s in self.samples)


def mazya_sample(label: str, E: np.ndarray, params: HSParams, domain: GridDomain,
                 solver: SolverConfig | None = None, collar_width: float | None = None,
                 mode: str = "ambient", floor: float = 1e-12) -> MazyaSample:
    lhs = set_integral(E, params, domain, mode)
    prob = CapacityProblem(domain, E, p=params.p, beta=params.beta, collar_width=collar_width)
    cap = solve_capacity(prob, solver).value
    degenerate = cap <= floor
    ratio = math.inf if degenerate else lhs / cap ** (params.q / params.p)
    return MazyaSample(label=label, n_cells=int(E.sum()), lhs=lhs, cap=cap, ratio=ratio, degenerate=degenerate)


def candidate_sets(domain: GridDomain, cover, seed: int = 0, n_balls: int = 8, n_unions: int = 8,
                   levels=(0.1, 0.2, 0.3), witness: np.ndarray | None = None, collar=None):
    """Seeded E-candidates: Whitney balls, unions of balls, ``{d >= s}``, witness level sets."""
    rng = np.random.default_rng(seed)
    out = []
    if collar is None:
        from .capacity import collar_mask
        collar = collar_mask(domain, domain.h)
    bad = collar
    k = len(cover)
    for i in sorted(rng.choice(k, size=min(n_balls, k), replace=False)):
        out.append((f"ball{i}", cover.ball_mask(int(i))))
    for j in range(n_unions):
        idx = sorted(rng.choice(k, size=min(int(rng.integers(2, 6)), k), replace=False))
        out.append((f"union{j}:" + "-".join(str(int(i)) for i in idx), cover.union_mask(idx)))
    dmax = float(domain.dist[domain.inside].max())
    for s in levels:
        out.append((f"superlevel_d{s:g}", domain.inside & (domain.dist >= s * dmax)))
    if witness is not None:
        wa = np.abs(witness)
        m = float(wa.max())
        for t in (0.25, 0.5, 0.75, 0.9):
            out.append((f"witness_level{t:g}", domain.inside & (wa >= t * m)))
    return [(lab, E & ~bad) for lab, E in out if (E & ~bad).any()]


def mazya_scan(domain: GridDomain, params: HSParams, candidates, solver: SolverConfig | None = None,
               collar_width: float | None = None, mode: str = "ambient") -> MazyaScan:
    samples, running = [], []
    best = 0.0
    for label, E in candidates:
        try:
            s = mazya_sample(label, E, params, domain, solver, collar_width, mode)
        except CapacityError as exc:
            log.warning("skipping sample %s: %s", label, exc)
            continue
        samples.append(s)
        best = max(best, s.ratio)
        running.append(best)
    return MazyaScan(samples=samples, running_max=running)


@dataclass
class AppliesReport:
    checked: int
    violations: int
    max_excess: float


def applies_check(witness: np.ndarray, sets, params: HSParams, domain: GridDomain,
                  mode: str = "ambient", rtol: float = 1e-12) -> AppliesReport:
    """For each ``E``: rescale the witness to be ``>= 1`` on ``E`` and compare
    ``int_E`` of the weight with ``hs_lhs(witness)^q``."""
    wa = np.abs(witness)
    checked = viol = 0
    worst = -math.inf
    for _, E in sets:
        m = float(wa[E].min()) if E.any() else 0.0
        if m <= 0:
            continue
        v = wa / m
        left = set_integral(E, params, domain, mode)
        right = hs_lhs(v, params, domain, mode) ** params.q
        checked += 1
        excess = (left - right) / right
        worst = max(worst, excess)
        if excess > rtol:
            viol += 1
    return AppliesReport(checked=checked, violations=viol, max_excess=float(worst if checked else 0.0))


# ---------------------------------------------------------------------------
# truncation chain


def _shell_energy_densities(domain: GridDomain, ua: np.ndarray, levels, w: np.ndarray, p: float):
    """Split the energy density of ``|u|`` among the shells ``2^j < |u| <= 2^{j+1}``.

    Along each axis edge the difference of ``|u|`` is split in proportion to
    the part of its value interval lying in each shell; a cell's share for
    shell ``j`` is ``|grad|u||^p`` times the matching fraction of the squared
    gradient.  Shares over all shells sum to at most the cell's density, and
    for ``p >= 2`` the truncation ``u_j`` has density at most ``2^{-jp}``
    times its share.
    """
    v = domain.to_compact(ua)
    diffs = [D @ v for D in gradient_operators(domain)]
    ends = [v + domain.h * dk for dk in diffs]
    g2 = sum(dk * dk for dk in diffs)
    base = domain.to_compact(w) * g2 ** (p / 2) * domain.cell_measure
    lo_v = [np.minimum(v, e) for e in ends]
    hi_v = [np.maximum(v, e) for e in ends]
    out = []
    for j in levels:
        lo, hi = 2.0 ** j, 2.0 ** (j + 1)
        num = np.zeros_like(v)
        for dk, a, b in zip(diffs, lo_v, hi_v):
            span = b - a
            over = np.clip(np.minimum(b, hi) - np.maximum(a, lo), 0.0, None)
            theta = np.divide(over, span, out=np.zeros_like(v), where=span > 0)
            num += theta * dk * dk
        frac = np.divide(num, g2, out=np.zeros_like(v), where=g2 > 0)
        out.append(base * frac)
    return out



@dataclass
class ChainReport:
    levels: list
    caps: list
    set_integrals: list
    C1: float
    lhs_q: float
    chain_a_rhs: float
    chain_a_ok: bool
    truncation_energies: list
    shell_bounds: list
    leak: float
    chain_b_ok: bool
    shell_energies: list
    chain_c_lhs: float
    chain_c_rhs: float
    chain_c_ok: bool
    quotient: float
    constant_bound: float
    residual: float = 0.0
    vacuous: bool = False

    def record(self) -> dict:
        return dict(self.__dict__)


def truncation_chain_check(u: np.ndarray, params: HSParams, domain: GridDomain,
                           solver: SolverConfig | None = None, collar_width: float | None = None,
                           mode: str = "ambient", leak_tol: float = 0.05,
                           max_levels: int = 40) -> ChainReport:
    """Replay the dyadic level-set argument on ``u``.

    Levels ``E_j = {|u| > 2^j}`` and truncations
    ``u_j = min(1, max(0, 2^-j |u| - 1))``.  Chain (a) compares
    ``hs_lhs(u)^q`` with ``4^q C1 sum 2^{jq} cap(E_{j+1})^{q/p}`` where ``C1``
    is the largest Maz'ya ratio over the ``E_j``.  Chain (b) compares
    ``energy(u_j)`` with ``2^{-jp}`` times the energy of ``u`` on the shell
    ``E_j \\ E_{j+1}`` (edge-split, see ``_shell_energy_densities``); the
    summed excess relative to the summed truncation energies is the leak and
    must stay below ``leak_tol``.  Chain (c) is superadditivity of ``t -> t^{q/p}``.
    """
    p, q, beta = params.p, params.q, params.beta
    ins = domain.inside
    ua = np.where(ins, np.abs(u), 0.0)
    pos = ua[ua > 0]
    if pos.size == 0 or ua.max() <= 0:
        raise ValueError("u vanishes identically")
    jmax = int(math.floor(math.log2(float(pos.max()))))
    jmin = max(int(math.floor(math.log2(float(pos.min())))) - 1, jmax - max_levels)
    levels = list(range(jmin, jmax + 1))
    w = DistanceWeight(beta).evaluate(domain)
    from .capacity import discrete_gradient
    g = discrete_gradient(domain, u)
    dens = w * g ** p * domain.cell_measure
    a = lhs_density(domain, params, mode)

    def E(j):
        return ins & (ua > 2.0 ** j)

    caps, ints = {}, {}
    for j in levels + [jmax + 1]:
        Ej = E(j)
        if not Ej.any():
            caps[j], ints[j] = 0.0, 0.0
            continue
        prob = CapacityProblem(domain, Ej, p=p, beta=beta, collar_width=collar_width)
        caps[j] = solve_capacity(prob, solver).value
        ints[j] = float(np.sum(a[Ej]) * domain.cell_measure)
    C1 = max((ints[j] / caps[j] ** (q / p) for j in caps if caps[j] > 0), default=0.0)
    lhs_q = float(np.sum(ua[ins] ** q * a[ins]) * domain.cell_measure)
    # mass below the lowest level (nonzero only when max_levels truncates)
    resid = float(np.sum((ua ** q * a)[ins & (ua > 0) & ~E(jmin)]) * domain.cell_measure)
    chain_a = 4.0 ** q * C1 * sum(2.0 ** (j * q) * caps[j + 1] ** (q / p) for j in levels)
    # cells at or below the lowest level are covered by the next-lower term
    chain_a += 4.0 ** q * C1 * 2.0 ** ((jmin - 1) * q) * caps[jmin] ** (q / p)
    chain_a_ok = lhs_q - resid <= chain_a * (1 + 1e-12)

    shell_dens = _shell_energy_densities(domain, ua, levels, w, p)
    trunc, bounds, shells = [], [], []
    for j, sd in zip(levels, shell_dens):
        uj = np.clip(ua / 2.0 ** j - 1.0, 0.0, 1.0)
        trunc.append(weighted_p_energy(domain, uj, p, beta))
        sj = float(np.sum(sd))
        shells.append(sj)
        bounds.append(2.0 ** (-j * p) * sj)
    tot = sum(trunc)
    excess = sum(max(0.0, t - b) for t, b in zip(trunc, bounds))
    leak = excess / tot if tot > 0 else 0.0
    total_energy = float(np.sum(dens[ins]))
    c_lhs = sum(s ** (q / p) for s in shells)
    c_rhs = total_energy ** (q / p)
    quotient = hs_quotient(u, params, domain, mode)
    return ChainReport(levels=levels, caps=[caps[j] for j in levels], set_integrals=[ints[j] for j in levels],
                       C1=C1, lhs_q=lhs_q, chain_a_rhs=chain_a, chain_a_ok=bool(chain_a_ok),
                       truncation_energies=trunc, shell_bounds=bounds, leak=leak, chain_b_ok=leak <= leak_tol,
                       shell_energies=shells, chain_c_lhs=c_lhs, chain_c_rhs=c_rhs,
                       chain_c_ok=c_lhs <= c_rhs * (1 + 1e-12), quotient=quotient,
                       constant_bound=4.0 * C1 ** (1.0 / q), residual=resid, vacuous=len(levels) == 0)


# ---------------------------------------------------------------------------
# interpolation between exponents


def power_sum_norm(a, r: float) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.sum(a ** r) ** (1.0 / r))


def interpolation_check(caps, q: float, q_prime: float, p: float, rtol: float = 0.0) -> bool:
    """``(sum a^{q'/p})^{p/q'} <= (sum a^{q/p})^{p/q}`` for ``q <= q'``."""
    if q_prime < q:
        raise ValueError("requires q <= q'")
    a = np.asarray(caps, dtype=float)
    if np.any(a < 0):
        raise ValueError("capacities must be nonnegative")
    if not a.size or not np.any(a > 0):
        return True
    big = power_sum_norm(a, q_prime / p)
    small = power_sum_norm(a, q / p)
    return big <= small * (1 + rtol)
