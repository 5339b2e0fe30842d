import math

import numpy as np
import pytest

from hardycap.capacity import SolverConfig
from hardycap.geometry import Ball, Box, build_domain, unit_ball_volume
from hardycap.hardy_sobolev import HSParams
from hardycap.quasiadd import (C_LIMIT, _trend, ball_bounds_scan, ball_reference, example_62_sequence,
                               index_families, quasiadd_candidates, quasiadd_scan, ramp_function,
                               sample_balls, weak_quasiadd_scan)
from hardycap.whitney import build_cover
from oracles import ramp_energy

DIRECT = SolverConfig(method="direct")
PRM = HSParams(2.0, 2.0, 0.0)


@pytest.fixture(scope="module")
def square():
    dom = build_domain(Box((0, 0), (1, 1)), 1 / 32)
    return dom, build_cover(dom, 1 / 54)


def test_c_limit():
    assert 1 / 54 < C_LIMIT < 1 / 52


def test_ball_reference():
    assert ball_reference(0.1, 2, PRM) == pytest.approx(unit_ball_volume(2) * 0.1 ** 2 * 0.1 ** -2)
    assert ball_reference(0.1, 2, HSParams(2, 2, 1), "qregular") == pytest.approx(0.1)


def test_candidates_extend_with_budget(square):
    _, cover = square
    a = quasiadd_candidates(cover, 4, seed=5)
    b = quasiadd_candidates(cover, 8, seed=5)
    for (la, Ea), (lb, Eb) in zip(a, b):
        assert la == lb and np.array_equal(Ea, Eb)
    assert index_families(cover, 3, 2) == index_families(cover, 6, 2)[:3]


def test_single_ball_weak_ratio_is_one(square):
    dom, cover = square
    fams = [[i] for i in sample_balls(cover, 6, seed=0)]
    res = weak_quasiadd_scan(dom, PRM, cover, fams, DIRECT)
    for s in res.samples:
        assert s.ratio == pytest.approx(1.0, abs=1e-12)
        assert s.subadditive


def test_weak_scan_subadditive(square):
    dom, cover = square
    res = weak_quasiadd_scan(dom, PRM, cover, index_families(cover, 8, seed=1), DIRECT)
    assert res.samples and all(s.subadditive for s in res.samples)
    assert all(s.union_cap <= sum(s.caps) * (1 + 1e-9) for s in res.samples)


def test_quasiadd_ratio_positive(square):
    dom, cover = square
    res = quasiadd_scan(dom, PRM, cover, quasiadd_candidates(cover, 6, seed=3), DIRECT)
    assert res.samples
    for s in res.samples:
        assert s.n_pieces >= 1
        if not s.degenerate:
            assert s.ratio > 0 and math.isfinite(s.ratio)


def test_ball_bounds_consistent(square):
    dom, cover = square
    bb = ball_bounds_scan(dom, PRM, cover, sample_balls(cover, 6, 0), DIRECT)
    assert bb.consistent
    assert bb.min_lower > 0 and bb.spread >= 1


def test_trend_rules():
    assert _trend([1.0, 1.1, 1.2]) == "bounded"
    assert _trend([1.0, 1.6, 2.6]) == "failing"
    assert _trend([1.0, 1.4]) == "undecided"
    assert _trend([4.0, 2.0, 1.0], decreasing=True) == "failing"
    assert _trend([1.0]) == "undecided"


def test_ramp_shape():
    dom = build_domain(Ball((0, 0), 1.0), 1 / 64)
    u = ramp_function(dom, 2)
    assert u[dom.nearest_cell((0, 0))] == 1.0
    assert u[dom.nearest_cell((0.9, 0))] == 0.0
    assert u.min() >= 0 and u.max() <= 1


@pytest.mark.parametrize("p,beta", [(2.0, 1.5), (2.0, 0.0)])
def test_ramp_energies_match_quadrature(p, beta):
    fit = example_62_sequence(p, beta, [2, 3, 4], 1 / 512)
    for j, e in zip(fit.js, fit.energies):
        assert e == pytest.approx(ramp_energy(2, p, beta, j), rel=0.06)


def test_example_errors():
    with pytest.raises(ValueError):
        example_62_sequence(1.0, 0.0, [2, 3], 1 / 64)
    with pytest.raises(ValueError):
        example_62_sequence(2.0, -1.0, [2, 3], 1 / 64)
    with pytest.raises(ValueError):
        example_62_sequence(2.0, 0.0, [2, 6], 1 / 64)
