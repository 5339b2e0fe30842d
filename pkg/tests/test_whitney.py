import numpy as np
import pytest

from hardycap.geometry import Annulus, Box, build_domain, l_shape
from hardycap.whitney import CoverError, build_cover, build_partition, net_separation_ok, verify_cover


@pytest.fixture(scope="module")
def square_cover():
    return build_cover(build_domain(Box((0, 0), (1, 1)), 1 / 64), 1 / 9)


def test_cover_checks_pass(square_cover):
    rep = verify_cover(square_cover)
    assert rep.covered and rep.contained and rep.sandwich_ok and rep.hypothesis_ok
    assert rep.uncovered_cells == 0 and rep.escaping_balls == 0


def test_net_is_separated(square_cover):
    assert net_separation_ok(square_cover)


def test_first_center_is_deepest(square_cover):
    d = square_cover.domain.dist
    first = tuple(square_cover.centers[0])
    assert d[first] == d[square_cover.domain.inside].max()


def test_radii_are_c_times_distance(square_cover):
    d = square_cover.domain.dist[tuple(square_cover.centers.T)]
    assert np.allclose(square_cover.radii, square_cover.c * d)


def test_cover_is_deterministic():
    dom = build_domain(l_shape(), 1 / 32)
    a, b = build_cover(dom, 1 / 12), build_cover(dom, 1 / 12)
    assert np.array_equal(a.centers, b.centers)


@pytest.mark.parametrize("shape", [Annulus((0, 0), 0.5, 1.0), l_shape()])
def test_other_shapes(shape):
    cover = build_cover(build_domain(shape, 1 / 32), 1 / 12)
    rep = verify_cover(cover)
    assert rep.passed


def test_partition_of_unity(square_cover):
    part = build_partition(square_cover)
    assert np.max(np.abs(part.sums() - 1.0)) < 1e-12
    assert part.nu >= 1.0 / part.M_obs
    assert part.t == pytest.approx(18 * square_cover.c)
    assert np.isfinite(part.K) and part.K > 0
    # support of phi_i inside 6 B_i
    dom = square_cover.domain
    phi = part.phi.tocoo()
    pts = dom.coords()[dom.inside]
    dist = np.linalg.norm(pts[phi.col] - square_cover.center_points[phi.row], axis=1)
    assert np.all(dist < 6 * square_cover.radii[phi.row])


def test_invalid_parameter():
    dom = build_domain(Box((0, 0), (1, 1)), 1 / 16)
    with pytest.raises(CoverError):
        build_cover(dom, 0.4)
    with pytest.raises(CoverError):
        build_cover(dom, 0.0)


def test_export(tmp_path, square_cover):
    square_cover.export_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "ball,x0,x1,r"
    assert len(lines) == len(square_cover) + 1
