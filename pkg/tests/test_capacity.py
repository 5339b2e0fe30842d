import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardycap.capacity import (CapacityError, CapacityProblem, GreenCapacity, SolverConfig, capacity_evaluator,
                               collar_mask, discrete_gradient, lipschitz_upper_bound, radial_condenser_capacity,
                               solve_capacity, weighted_p_energy)
from hardycap.geometry import Ball, Box, build_domain
from oracles import radial_lbfgs, radial_series

SQUARE = build_domain(Box((0, 0), (1, 1)), 1 / 32)


@pytest.mark.parametrize("n,p", [(2, 2), (2, 3), (2, 1.5), (3, 2), (3, 3), (3, 4)])
def test_closed_form_matches_radial_oracles(n, p):
    ref = radial_condenser_capacity(n, p, 0.25, 1.0)
    assert radial_series(n, p, 0.25, 1.0) == pytest.approx(ref, rel=1e-7)
    assert radial_lbfgs(n, p, 0.25, 1.0) == pytest.approx(ref, rel=1e-4)


def test_closed_form_known_values():
    assert radial_condenser_capacity(2, 2, 0.25, 1) == pytest.approx(2 * math.pi / math.log(4))
    assert radial_condenser_capacity(2, 3, 0.25, 1) == pytest.approx(2 * math.pi)


def test_energy_of_linear_field():
    dom = build_domain(Box((0, 0), (1, 1)), 1 / 16)
    x = dom.coords()[..., 0]
    u = np.where(dom.inside, x, 0.0)
    g = discrete_gradient(dom, u)
    # interior cells whose forward neighbours are inside see slope 1 exactly
    inner = dom.inside & (dom.coords()[..., 0] < 1 - 1.5 / 16) & (dom.coords()[..., 1] < 1 - 1.5 / 16)
    assert np.allclose(g[inner], 1.0)
    assert weighted_p_energy(dom, np.zeros(dom.shape), 2, 0) == 0.0


def test_energy_is_homogeneous():
    rng = np.random.default_rng(0)
    u = np.where(SQUARE.inside, rng.random(SQUARE.shape), 0.0)
    for p in (1.5, 2, 3):
        assert weighted_p_energy(SQUARE, 3 * u, p, 1.0) == pytest.approx(3 ** p * weighted_p_energy(SQUARE, u, p, 1.0))


def test_condenser_coarse_grid():
    dom = build_domain(Ball((0, 0), 1.0), 1 / 64)
    res = solve_capacity(CapacityProblem(dom, dom.cells_in_ball((0, 0), 0.25)), SolverConfig(method="direct"))
    assert res.value == pytest.approx(2 * math.pi / math.log(4), rel=0.03)
    assert res.feasibility_residual == 0.0
    assert res.value <= res.upper_bound


def test_apg_agrees_with_direct():
    E = SQUARE.cells_in_ball((0.5, 0.5), 0.15)
    prob = CapacityProblem(SQUARE, E)
    a = solve_capacity(prob, SolverConfig(tol=1e-9))
    b = solve_capacity(prob, SolverConfig(method="direct"))
    assert a.value == pytest.approx(b.value, rel=1e-5)
    assert a.value >= b.value * (1 - 1e-12)


def test_green_matches_direct():
    g = GreenCapacity(SQUARE)
    for x, r in (((0.3, 0.4), 0.001), ((0.5, 0.5), 0.1), ((0.2, 0.7), 0.05)):
        E = SQUARE.cells_in_ball(x, r)
        d = solve_capacity(CapacityProblem(SQUARE, E), SolverConfig(method="direct")).value
        assert g(E) == pytest.approx(d, rel=1e-10)


def test_problem_errors():
    E = SQUARE.cells_in_ball((0.5, 0.5), 0.1)
    with pytest.raises(CapacityError):
        CapacityProblem(SQUARE, E, p=1.0)
    with pytest.raises(CapacityError):
        CapacityProblem(SQUARE, np.zeros(SQUARE.shape, dtype=bool))
    with pytest.raises(CapacityError):
        CapacityProblem(SQUARE, collar_mask(SQUARE, SQUARE.h))
    with pytest.raises(ValueError):
        solve_capacity(CapacityProblem(SQUARE, E, p=3), SolverConfig(method="direct"))


def test_collar_covers_boundary_jumps():
    c = collar_mask(SQUARE, SQUARE.h)
    # every inside cell with an outside backward neighbour is pinned
    ins = SQUARE.inside
    back = np.zeros_like(ins)
    back[1:, :] |= ~ins[:-1, :]
    back[:, 1:] |= ~ins[:, :-1]
    assert np.all(c[ins & back])


def _disc(cx, cy, r):
    return SQUARE.cells_in_ball((cx, cy), r) & ~collar_mask(SQUARE, SQUARE.h)


centers = st.floats(0.2, 0.8)
radii = st.floats(0.02, 0.12)


@settings(max_examples=15, deadline=None)
@given(centers, centers, radii, st.floats(1.0, 1.8))
def test_monotone_in_the_set(cx, cy, r, grow):
    cap = capacity_evaluator(SQUARE, 2, 0.0)
    small = _disc(cx, cy, r)
    big = _disc(cx, cy, r * grow) | small
    assert cap(small) <= cap(big) * (1 + 2e-6)


@settings(max_examples=15, deadline=None)
@given(centers, centers, centers, centers, radii)
def test_subadditive_p2(ax, ay, bx, by, r):
    cap = capacity_evaluator(SQUARE, 2, 0.0)
    A, B = _disc(ax, ay, r), _disc(bx, by, r)
    assert cap(A | B) <= (cap(A) + cap(B)) * (1 + 2e-6)


@settings(max_examples=10, deadline=None)
@given(centers, centers, radii, st.sampled_from([1.5, 2.0, 3.0]), st.sampled_from([0.0, 0.5, 1.0]))
def test_solution_below_lipschitz_bound(cx, cy, r, p, beta):
    prob = CapacityProblem(SQUARE, _disc(cx, cy, r), p=p, beta=beta)
    res = solve_capacity(prob, SolverConfig(tol=1e-5))
    assert res.value <= lipschitz_upper_bound(prob) * (1 + 2e-5)


def test_scaling_law_is_exact_on_scaled_grids():
    vals = {}
    for lam in (0.5, 1.0, 2.0):
        dom = build_domain(Ball((0, 0), lam), lam / 32)
        prob = CapacityProblem(dom, dom.cells_in_ball((0, 0), 0.25 * lam), p=2, beta=1.0)
        vals[lam] = solve_capacity(prob, SolverConfig(method="direct")).value
    for lam in (0.5, 2.0):
        assert vals[lam] / vals[1.0] == pytest.approx(lam ** (2 - 2 + 1.0), rel=1e-10)
