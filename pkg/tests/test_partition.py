import math
from fractions import Fraction

import numpy as np
import pytest

from kpax.partition import (
    CellMask,
    Domain,
    OutOfDomainError,
    build_partition,
    cell_center,
    cell_centers,
    locate,
    locate_many,
    mask_sublevel,
    pad_axis,
    pairwise_distance,
    refine,
)

PEND_LEVEL = 0.5 * math.pi**2 + 1.0


def pend_H(x):
    x = np.asarray(x)
    return 0.5 * x[..., 1] ** 2 - np.cos(x[..., 0])


def circle(d=4):
    return build_partition(Domain((0.0,), (1.0,), (True,)), (d,))


def test_build_circle():
    p = circle(4)
    assert p.q == 4
    assert p.cell_extent[0] == pytest.approx(0.25)
    assert p.diam_bound == pytest.approx(0.25)


def test_build_2d():
    dom = Domain((0.0, -4.0), (2 * math.pi, 4.0), (True, False))
    p = build_partition(dom, (8, 8))
    assert p.q == 64
    assert np.allclose(p.cell_extent, [math.pi / 4, 1.0])


def test_zero_count_rejected():
    with pytest.raises(ValueError):
        build_partition(Domain((0.0,), (1.0,), (True,)), (0,))


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain((1.0,), (0.0,), (True,))
    with pytest.raises(ValueError):
        Domain((0.0,) * 4, (1.0,) * 4, (True,) * 4)


def test_locate_basic():
    p = circle(4)
    assert locate(p, [0.3]) == 1
    assert locate(p, [1.0]) == 0  # periodic wrap


def test_locate_out_of_domain():
    dom = Domain((0.0,), (1.0,), (False,))
    p = build_partition(dom, (4,))
    with pytest.raises(OutOfDomainError):
        locate(p, [1.5])
    assert locate(p, [1.0]) == 3  # closed top face


def test_locate_center_identity():
    for dom, dims in [
        (Domain((0.0,), (1.0,), (True,)), (7,)),
        (Domain((0.0, -4.0), (2 * math.pi, 4.0), (True, False)), (5, 6)),
        (Domain((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (True, True, True)), (3, 4, 5)),
    ]:
        p = build_partition(dom, dims)
        centers = cell_centers(p)
        assert np.array_equal(locate_many(p, centers), np.arange(p.q))


def test_cell_center_values():
    p = circle(4)
    assert cell_center(p, 0)[0] == pytest.approx(0.125)
    p2 = build_partition(Domain((0.0, 0.0), (1.0, 1.0), (False, False)), (2, 2))
    assert np.allclose(cell_center(p2, 3), [0.75, 0.75])  # row-major
    with pytest.raises(IndexError):
        cell_center(p2, 4)


def test_refine_counts_and_identity():
    p = build_partition(Domain((0.0, 0.0), (1.0, 1.0), (False, False)), (2, 2))
    r = refine(p, (2, 2))
    assert r.dims == (4, 4) and r.q == 16 and r.level == p.level + 1
    same = refine(p, (1, 1))
    assert same.dims == p.dims
    assert np.array_equal(cell_centers(same), cell_centers(p))
    with pytest.raises(ValueError):
        refine(p, (0, 2))


def test_refine_nesting_bit_exact():
    # parent grid planes must reappear exactly among the child grid planes
    dom = Domain((0.0, -4.0), (2 * math.pi, 4.0), (True, False))
    p = build_partition(dom, (5, 3))
    r = refine(p, (3, 4))
    for k, f in enumerate((3, 4)):
        parent = p.axis_corners(k)
        child = r.axis_corners(k)
        assert np.array_equal(parent, child[::f])


def test_refine_parent_is_union_of_children_1d():
    p = build_partition(Domain((0.0,), (1.0,), (True,)), (2,))
    r = refine(p, (2,))
    kids = locate_many(r, cell_centers(r))
    # children 0,1 tile parent 0 exactly: their corner set includes both
    assert np.array_equal(p.axis_corners(0), r.axis_corners(0)[::2])
    assert list(kids) == [0, 1, 2, 3]


def test_equal_measure_exact_rational():
    # uniform boxes: in exact arithmetic every cell volume is identical
    dom = Domain((0.0, -4.0), (2 * math.pi, 4.0), (True, False))
    p = build_partition(dom, (7, 5))
    widths = [Fraction(hi) - Fraction(lo) for lo, hi in zip(dom.lo, dom.hi)]
    vols = set()
    for multi in np.ndindex(*p.dims):
        v = Fraction(1)
        for k, i in enumerate(multi):
            lo_i = Fraction(i, p.dims[k]) * widths[k]
            hi_i = Fraction(i + 1, p.dims[k]) * widths[k]
            v *= hi_i - lo_i
        vols.add(v)
    assert len(vols) == 1


def test_diam_bound_monotone_under_refinement():
    p = build_partition(Domain((0.0, 0.0), (1.0, 2.0), (False, False)), (2, 2))
    r = refine(p, (2, 3))
    assert r.diam_bound < p.diam_bound
    assert r.diam_bound == pytest.approx(
        math.sqrt((0.5 / 2) ** 2 + (1.0 / 3) ** 2)
    )


def test_mask_sublevel_pendulum_center_active():
    # single cell centered at (pi, 0): H = 1 <= level
    dom = Domain((0.0, -1.0), (2 * math.pi, 1.0), (True, False))
    p = build_partition(dom, (1, 1))
    m = mask_sublevel(p, pend_H, PEND_LEVEL)
    assert m.active_count == 1


def test_mask_sublevel_pendulum_center_inactive():
    # single cell centered at (pi, 4): H = 9 > level
    dom = Domain((0.0, 0.0), (2 * math.pi, 8.0), (True, False))
    p = build_partition(dom, (1, 1))
    m = mask_sublevel(p, pend_H, PEND_LEVEL)
    assert m.active_count == 0


def test_mask_sublevel_infinite_level():
    c = math.sqrt(math.pi**2 + 4)
    dom = Domain((0.0, -c), (2 * math.pi, c), (True, False))
    p = build_partition(dom, (8, 8))
    m = mask_sublevel(p, pend_H, math.inf)
    assert m.active_count == p.q


def test_mask_stable_under_reevaluation():
    c = math.sqrt(math.pi**2 + 4)
    dom = Domain((0.0, -c), (2 * math.pi, c), (True, False))
    p = build_partition(dom, (16, 16))
    m1 = mask_sublevel(p, pend_H, PEND_LEVEL)
    m2 = mask_sublevel(p, pend_H, PEND_LEVEL)
    assert np.array_equal(m1.active, m2.active)
    assert 0 < m1.active_count < p.q


def test_pad_axis():
    dom = Domain((0.0, -2.0), (1.0, 2.0), (True, False))
    p = build_partition(dom, (4, 8))
    padded = pad_axis(p, 1, 2)
    assert padded.dims == (4, 12)
    assert padded.domain.periodic[1] and padded.padded[1]
    assert not padded.padded[0]
    assert np.allclose(padded.cell_extent, p.cell_extent)
    assert padded.domain.lo[1] == pytest.approx(-3.0)
    with pytest.raises(ValueError):
        pad_axis(p, 0, 1)  # already periodic


def test_pairwise_distance_wraps():
    dom = Domain((0.0,), (1.0,), (True,))
    d = pairwise_distance(dom, np.array([[0.05]]), np.array([[0.95]]))
    assert d[0, 0] == pytest.approx(0.1)
    dom2 = Domain((0.0,), (1.0,), (False,))
    d2 = pairwise_distance(dom2, np.array([[0.05]]), np.array([[0.95]]))
    assert d2[0, 0] == pytest.approx(0.9)


def test_mask_requires_matching_length():
    p = circle(4)
    with pytest.raises(ValueError):
        CellMask(p, np.ones(3, dtype=bool))
