"""Weighted relative (p, beta)-capacity of condensers on grid domains.

The capacity of ``E`` relative to ``Omega`` is the minimum of the discrete
weighted p-energy ``sum_x w_beta(x) |grad_h u(x)|^p h^n`` over fields with
``u >= 1`` on ``E`` and ``u = 0`` on a collar of cells next to the
complement.  ``grad_h`` is the forward-difference gradient with zero
extension outside the domain.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .geometry import DistanceWeight, GridDomain, distance_to_set, unit_ball_volume

log = logging.getLogger(__name__)


class CapacityError(RuntimeError):
    """The capacity problem is infeasible or the solver produced non-finite values."""


# ---------------------------------------------------------------------------
# discrete gradient


def gradient_operators(domain: GridDomain) -> list:
    """Sparse forward-difference matrices acting on compact inside-cell vectors.

    Row ``i`` of the ``k``-th matrix gives ``(u(x_i + h e_k) - u(x_i)) / h``;
    the neighbour value is taken as 0 when it lies outside the domain.
    """
    def make():
        m = domain.n_inside
        flat = domain.inside_flat
        comp = domain.compact_index
        strides = np.array(domain.inside.strides) // domain.inside.itemsize
        ops = []
        rows = np.arange(m)
        for k in range(domain.n):
            nb = comp[flat + strides[k]]
            has = nb >= 0
            r = np.concatenate([rows, rows[has]])
            c = np.concatenate([rows, nb[has]])
            v = np.concatenate([np.full(m, -1.0 / domain.h), np.full(has.sum(), 1.0 / domain.h)])
            ops.append(sparse.csr_matrix((v, (r, c)), shape=(m, m)))
        return ops
    return domain._cached("grad_ops", make)


def _transposed_operators(domain: GridDomain) -> list:
    return domain._cached("grad_ops_T", lambda: [D.T.tocsr() for D in gradient_operators(domain)])


def discrete_gradient(domain: GridDomain, u: np.ndarray) -> np.ndarray:
    """Per-cell magnitude of the forward-difference gradient (zero outside)."""
    v = domain.to_compact(u)
    g2 = np.zeros(domain.n_inside)
    for D in gradient_operators(domain):
        g2 += (D @ v) ** 2
    return domain.from_compact(np.sqrt(g2))


def weighted_p_energy(domain: GridDomain, u: np.ndarray, p: float, beta: float) -> float:
    """``sum w_beta |grad_h u|^p h^n`` over inside cells."""
    w = domain.to_compact(DistanceWeight(beta).evaluate(domain))
    g = domain.to_compact(discrete_gradient(domain, u))
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.sum(w * g ** p) * domain.cell_measure)
    if not math.isfinite(val):
        raise FloatingPointError(f"weighted energy overflowed (p={p}, beta={beta})")
    return val


# ---------------------------------------------------------------------------
# problem and result types


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 20000
    eps: float = 1e-6
    window: int = 50
    # "apg": accelerated projected gradient; "direct": sparse linear solve (p = 2
    # only); "auto": direct when p == 2, apg otherwise
    method: str = "apg"

    def validate(self) -> list:
        errs = []
        if not self.tol > 0:
            errs.append("solver tol must be > 0")
        if self.max_iter < 1:
            errs.append("solver max_iter must be >= 1")
        if self.eps < 0:
            errs.append("solver eps must be >= 0")
        if self.window < 1:
            errs.append("solver window must be >= 1")
        if self.method not in ("apg", "direct", "auto"):
            errs.append(f"unknown solver method {self.method!r}")
        return errs


@dataclass(eq=False)
class CapacityProblem:
    """Condenser ``(E, Omega)`` with exponent ``p`` and weight exponent ``beta``.

    ``collar_width`` defaults to one grid step.  Inside cells with
    ``d < collar_width`` are pinned to zero, as is every inside cell whose
    backward neighbour along some axis is outside (so that no jump to the
    complement escapes the forward-difference energy).
    """

    domain: GridDomain
    E: np.ndarray
    p: float = 2.0
    beta: float = 0.0
    collar_width: float | None = None
    _collar: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=bool)
        if self.E.shape != self.domain.shape:
            raise CapacityError("E must be a mask of the domain grid")
        if not self.p > 1:
            raise CapacityError("capacity requires 1 < p")
        if not self.E.any():
            raise CapacityError("E must be nonempty")
        if np.any(self.E & ~self.domain.inside):
            raise CapacityError("E must consist of inside cells")
        if self.collar_width is None:
            self.collar_width = self.domain.h
        if np.any(self.E & self.collar):
            raise CapacityError("infeasible problem: E intersects the collar")

    @property
    def weight(self) -> DistanceWeight:
        return DistanceWeight(self.beta)

    @property
    def collar(self) -> np.ndarray:
        if self._collar is None:
            self._collar = collar_mask(self.domain, self.collar_width)
        return self._collar

    @property
    def dist_E_complement(self) -> float:
        """``d(E, Omega^c)`` measured from cell centers."""
        return float(self.domain.dist[self.E].min())


def collar_mask(domain: GridDomain, width: float) -> np.ndarray:
    inside = domain.inside
    collar = inside & (domain.dist < width)
    for k in range(domain.n):
        back = np.zeros_like(inside)
        sl_dst = [slice(None)] * domain.n
        sl_src = [slice(None)] * domain.n
        sl_dst[k] = slice(1, None)
        sl_src[k] = slice(None, -1)
        back[tuple(sl_dst)] = ~inside[tuple(sl_src)]
        collar |= inside & back
    return collar


@dataclass
class CapacityResult:
    value: float
    minimizer: np.ndarray
    density: np.ndarray
    iterations: int
    rel_decrease: float
    feasibility_residual: float
    upper_bound: float
    method: str
    converged: bool
    collar_width: float

    def record(self) -> dict:
        return {
            "value": self.value,
            "upper_bound": self.upper_bound,
            "iterations": self.iterations,
            "rel_decrease": self.rel_decrease,
            "feasibility_residual": self.feasibility_residual,
            "method": self.method,
            "converged": self.converged,
            "collar_width": self.collar_width,
        }


# ---------------------------------------------------------------------------
# explicit test functions


def lipschitz_test_function(problem: CapacityProblem) -> np.ndarray:
    """``max(0, 1 - 2 d(x, E) / d(E, complement))``, zeroed on the collar."""
    dom = problem.domain
    dE = distance_to_set(dom, problem.E)
    phi = np.maximum(0.0, 1.0 - 2.0 * dE / problem.dist_E_complement)
    phi[~dom.inside | problem.collar] = 0.0
    return phi


def lipschitz_upper_bound(problem: CapacityProblem) -> float:
    return weighted_p_energy(problem.domain, lipschitz_test_function(problem), problem.p, problem.beta)


def ball_test_function(domain: GridDomain, center, radius: float, dilation: float,
                       collar: np.ndarray | None = None) -> np.ndarray:
    """``max(0, 1 - d(x, B) / d(B, complement of L B))`` for ``B = B(center, radius)``."""
    pts = domain.coords()
    rho = np.sqrt(np.sum((pts - np.asarray(center, dtype=float)) ** 2, axis=-1))
    dist_B = np.maximum(rho - radius, 0.0)
    phi = np.maximum(0.0, 1.0 - dist_B / ((dilation - 1.0) * radius))
    phi[~domain.inside] = 0.0
    if collar is not None:
        phi[collar] = 0.0
    return phi


def ball_problem(cover, i: int, p: float, beta: float, collar_width: float | None = None) -> CapacityProblem:
    """Capacity problem for the Whitney ball ``B_i`` of ``cover``."""
    dom = cover.domain
    E = dom.cells_in_ball(cover.center_points[i], cover.radii[i])
    return CapacityProblem(dom, E, p=p, beta=beta, collar_width=collar_width)


def ball_test_upper_bound(cover, i: int, p: float, beta: float,
                          collar_width: float | None = None) -> float:
    """Energy of the ball-adapted test function with ``B* = B / (3c)``."""
    prob = ball_problem(cover, i, p, beta, collar_width)
    L = 1.0 / (3.0 * cover.c)
    phi = ball_test_function(prob.domain, cover.center_points[i], cover.radii[i], L, prob.collar)
    phi[prob.E] = 1.0
    return weighted_p_energy(prob.domain, phi, p, beta)


# ---------------------------------------------------------------------------
# solvers


class _Objective:
    """Smoothed weighted p-energy on compact vectors."""

    def __init__(self, problem: CapacityProblem, eps: float):
        dom = problem.domain
        self.D = gradient_operators(dom)
        self.DT = _transposed_operators(dom)
        self.wh = dom.to_compact(DistanceWeight(problem.beta).evaluate(dom)) * dom.cell_measure
        self.p = problem.p
        self.eps2 = eps * eps if problem.p < 2 else 0.0

    def value(self, u):
        s2 = sum((D @ u) ** 2 for D in self.D)
        return float(np.dot(self.wh, (s2 + self.eps2) ** (self.p / 2)))

    def value_grad(self, u):
        G = [D @ u for D in self.D]
        s2 = sum(g * g for g in G) + self.eps2
        if self.p == 2:
            dens = s2
            coef = 2.0 * self.wh
        else:
            base = s2 ** ((self.p - 2) / 2)
            dens = base * s2
            coef = self.p * self.wh * base
        grad = sum(DT @ (coef * g) for DT, g in zip(self.DT, G))
        return float(np.dot(self.wh, dens)), grad


def _apg(problem: CapacityProblem, cfg: SolverConfig, u0: np.ndarray):
    """FISTA with backtracking and function-value restart."""
    dom = problem.domain
    obj = _Objective(problem, cfg.eps)
    Ec = dom.to_compact(problem.E)
    pin = dom.to_compact(problem.collar)

    def proj(v):
        v[pin] = 0.0
        np.maximum(v, 1.0, out=v, where=Ec)
        return v

    x = proj(dom.to_compact(u0).copy())
    Fx = obj.value(x)
    if not math.isfinite(Fx):
        raise CapacityError("non-finite objective at the initial point")
    y, t, L = x.copy(), 1.0, 1.0
    hist = [Fx]
    rel = math.inf
    it = 0
    while it < cfg.max_iter:
        it += 1
        Fy, gy = obj.value_grad(y)
        if not math.isfinite(Fy):
            raise CapacityError("non-finite objective during iteration")
        while True:
            z = proj(y - gy / L)
            dz = z - y
            Fz = obj.value(z)
            if Fz <= Fy + np.dot(gy, dz) + 0.5 * L * np.dot(dz, dz) + 1e-15 * abs(Fy):
                break
            L *= 2.0
            if L > 1e300:
                raise CapacityError("line search failed")
        if Fz > Fx:
            # momentum overshoot: restart from the last accepted iterate
            y, t = x.copy(), 1.0
            hist.append(Fx)
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = z + ((t - 1.0) / t_new) * (z - x)
            x, Fx, t = z, Fz, t_new
            hist.append(Fx)
            L *= 0.95
        if len(hist) > cfg.window:
            old = hist[-1 - cfg.window]
            rel = (old - Fx) / max(abs(Fx), 1e-300)
            if rel < cfg.tol:
                return x, it, rel, True
    return x, it, rel, False


def _direct(problem: CapacityProblem):
    """Exact minimiser for p = 2: weighted graph-harmonic with u = 1 on E."""
    dom = problem.domain
    wh = dom.to_compact(DistanceWeight(problem.beta).evaluate(dom)) * dom.cell_measure
    W = sparse.diags(wh)
    A = sum(D.T @ W @ D for D in gradient_operators(dom)).tocsr()
    Ec = dom.to_compact(problem.E)
    free = ~(Ec | dom.to_compact(problem.collar))
    u = np.zeros(dom.n_inside)
    u[Ec] = 1.0
    if free.any():
        A_ff = A[free][:, free].tocsc()
        rhs = -(A[free][:, Ec] @ u[Ec])
        u[free] = spsolve(A_ff, rhs)
    if not np.all(np.isfinite(u)):
        raise CapacityError("direct solve produced non-finite values")
    return u


def solve_capacity(problem: CapacityProblem, cfg: SolverConfig | None = None) -> CapacityResult:
    """Minimise the weighted p-energy over feasible fields.

    The iteration starts from the Lipschitz test function; the reported value
    is the unsmoothed energy of the returned field.
    """
    cfg = cfg or SolverConfig()
    errs = cfg.validate()
    if errs:
        raise ValueError("; ".join(errs))
    dom = problem.domain
    phi = lipschitz_test_function(problem)
    ub = weighted_p_energy(dom, phi, problem.p, problem.beta)
    method = cfg.method
    if method == "auto":
        method = "direct" if problem.p == 2 else "apg"
    if method == "direct":
        if problem.p != 2:
            raise ValueError("direct solver requires p == 2")
        x = _direct(problem)
        iters, rel, conv = 1, 0.0, True
    else:
        x, iters, rel, conv = _apg(problem, cfg, phi)
        if not conv:
            log.warning("capacity solver hit max_iter=%d (rel decrease %.3g)", cfg.max_iter, rel)
    u = dom.from_compact(x)
    value = weighted_p_energy(dom, u, problem.p, problem.beta)
    if value > ub:
        # smoothing bias (p < 2) can leave the iterate above the warm start
        u, value = phi, ub
    Ec = problem.E
    resid = max(float(np.max(np.maximum(1.0 - u[Ec], 0.0))), float(np.max(np.abs(u[problem.collar]), initial=0.0)))
    w = DistanceWeight(problem.beta).evaluate(dom)
    density = w * discrete_gradient(dom, u) ** problem.p * dom.cell_measure
    return CapacityResult(value=value, minimizer=u, density=density, iterations=iters,
                          rel_decrease=float(rel), feasibility_residual=resid, upper_bound=ub,
                          method=method, converged=conv, collar_width=float(problem.collar_width))


# ---------------------------------------------------------------------------
# closed forms used as report references


def radial_condenser_capacity(n: int, p: float, r: float, R: float) -> float:
    """Unweighted p-capacity of ``closed B(0, r)`` relative to ``B(0, R)`` in R^n."""
    sigma = n * unit_ball_volume(n)
    if p == n:
        return sigma * math.log(R / r) ** (1 - n)
    a = (p - n) / (p - 1)
    return sigma * abs((n - p) / (p - 1)) ** (p - 1) * abs(r ** a - R ** a) ** (1 - p)


class GreenCapacity:
    """Exact ``p = 2`` capacities of many small sets from one factorisation.

    With ``G`` the inverse of the weighted graph Laplacian on non-collar
    cells, ``cap(E) = 1^T (G_EE)^{-1} 1``.  Sets larger than ``max_cells``
    fall back to a direct solve.
    """

    def __init__(self, domain: GridDomain, beta: float = 0.0, collar_width: float | None = None,
                 max_cells: int = 400):
        from scipy.sparse.linalg import splu
        self.domain = domain
        self.beta = beta
        self.collar_width = domain.h if collar_width is None else collar_width
        self.max_cells = max_cells
        collar = collar_mask(domain, self.collar_width)
        self.collar = collar
        wh = domain.to_compact(DistanceWeight(beta).evaluate(domain)) * domain.cell_measure
        A = sum(D.T @ sparse.diags(wh) @ D for D in gradient_operators(domain)).tocsr()
        self.free = ~domain.to_compact(collar)
        self.pos = np.full(domain.n_inside, -1, dtype=np.int64)
        self.pos[self.free] = np.arange(int(self.free.sum()))
        self.lu = splu(A[self.free][:, self.free].tocsc())

    def __call__(self, E: np.ndarray) -> float:
        E = np.asarray(E, dtype=bool)
        if np.any(E & self.collar):
            raise CapacityError("infeasible problem: E intersects the collar")
        if np.any(E & ~self.domain.inside):
            raise CapacityError("E must consist of inside cells")
        idx = self.pos[self.domain.to_compact(E)]
        if idx.size == 0:
            raise CapacityError("E must be nonempty")
        if idx.size > self.max_cells:
            prob = CapacityProblem(self.domain, E, p=2.0, beta=self.beta, collar_width=self.collar_width)
            return solve_capacity(prob, SolverConfig(method="direct")).value
        rhs = np.zeros((self.lu.shape[0], idx.size))
        rhs[idx, np.arange(idx.size)] = 1.0
        G = self.lu.solve(rhs)[idx]
        ones = np.ones(idx.size)
        return float(ones @ np.linalg.solve(0.5 * (G + G.T), ones))


def capacity_evaluator(domain: GridDomain, p: float, beta: float, solver: SolverConfig | None = None,
                       collar_width: float | None = None):
    """Callable ``E -> cap_{p,beta}(E)``; factor-once Green evaluation when ``p = 2``."""
    method = (solver or SolverConfig()).method
    if p == 2 and method in ("auto", "direct"):
        return GreenCapacity(domain, beta, collar_width)

    def evaluate(E):
        prob = CapacityProblem(domain, E, p=p, beta=beta, collar_width=collar_width)
        return solve_capacity(prob, solver).value
    return evaluate
