import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from cellspline.geometry import RodParams, rod_polyline
from cellspline.metrics import (
    InvalidInputError,
    InvalidPairingError,
    Mask,
    average_multiobject_dice,
    dice,
    foreground_dice,
    per_cell_dice,
    rasterize,
    score,
    union,
)

from . import oracles


def block(x0, y0, w, h, size=(20, 20)):
    m = np.zeros(size, dtype=bool)
    m[y0 : y0 + h, x0 : x0 + w] = True
    return m


# --- rasterize -----------------------------------------------------------------------

def test_square_pixel_centers():
    sq = np.array([(1.5, 1.5), (5.5, 1.5), (5.5, 5.5), (1.5, 5.5)])
    m = rasterize(sq, 8, 8)
    assert m.count() == 16
    assert m.bbox() == (2, 2, 5, 5)


def test_triangle_matches_point_in_polygon():
    tri = np.array([(1.3, 2.2), (17.8, 5.1), (6.4, 15.7)])
    np.testing.assert_array_equal(rasterize(tri, 20, 20).bits, oracles.raster_oracle(tri, 20, 20))


def test_random_polygons_match_point_in_polygon():
    rng = np.random.default_rng(0)
    for _ in range(20):
        poly = oracles.star_polygon(rng, rng.uniform(5, 20, 2), 2, 9, int(rng.integers(3, 30)))
        np.testing.assert_array_equal(rasterize(poly, 25, 25).bits, oracles.raster_oracle(poly, 25, 25))


def test_rasterize_with_origin():
    sq = np.array([(11.5, 21.5), (15.5, 21.5), (15.5, 25.5), (11.5, 25.5)])
    m = rasterize(sq, 8, 8, origin=(10, 20))
    assert m.count() == 16 and m.bbox() == (12, 22, 15, 25)


def test_zero_area_polyline():
    assert rasterize(np.array([(1, 1), (5, 5), (1, 1)], dtype=float), 8, 8).count() == 0
    assert rasterize(np.array([(1, 1), (5, 1)], dtype=float), 8, 8).count() == 0


@given(st.floats(6.2, 30.7), st.floats(6.2, 30.7), st.floats(10.8, 13.8), st.floats(-7.6, 7.6),
       st.floats(-7.6, 7.6), st.floats(-3.2, 3.2))
def test_constrained_rod_is_one_4_connected_component(l1, l2, w, d, e, alpha):
    poly = rod_polyline(RodParams(40, 40, l1, l2, w, d, e, alpha))
    _, n = ndimage.label(rasterize(poly, 80, 80).bits)  # default structure is 4-connectivity
    assert n == 1


# --- dice ---------------------------------------------------------------------------------

def test_dice_examples():
    a = block(2, 2, 10, 10)
    assert dice(a, a) == 1.0
    assert dice(a, block(12, 12, 5, 5)) == 0.0
    b = block(2, 7, 10, 10)  # 50 shared pixels of 100
    assert dice(a, b) == 0.5


def test_dice_empty_vs_empty():
    z = np.zeros((5, 5), dtype=bool)
    assert dice(z, z) == 1.0


def test_dice_shape_mismatch():
    with pytest.raises(InvalidInputError):
        dice(np.zeros((4, 4), bool), np.zeros((4, 5), bool))


def test_dice_aligns_masks_by_origin():
    a = Mask(np.ones((3, 3), bool), (10, 10))
    b = Mask(np.ones((3, 3), bool), (11, 10))
    assert dice(a, b) == pytest.approx(2 * 6 / 18)


@given(st.integers(0, 2**31 - 1))
def test_dice_symmetric_and_reflexive(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((10, 10)) < 0.4
    b = rng.random((10, 10)) < 0.4
    assert dice(a, b) == dice(b, a)
    if a.any():
        assert dice(a, a) == 1.0


# --- FD / AMD ------------------------------------------------------------------------------

def test_fd_identity():
    masks = [block(1, 1, 8, 8), block(5, 5, 8, 8), block(12, 2, 4, 6)]
    assert foreground_dice(masks, masks, 20, 20) == 1.0


def test_fd_union_semantics():
    pred = [block(1, 1, 8, 8), block(5, 5, 8, 8)]
    gt = [block(1, 1, 8, 8) | block(5, 5, 8, 8)]
    assert foreground_dice(pred, gt, 20, 20) == 1.0


def test_fd_matches_naive_union_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        pred = [rng.random((15, 15)) < 0.2 for _ in range(4)]
        gt = [rng.random((15, 15)) < 0.2 for _ in range(4)]
        up = np.zeros((15, 15), bool)
        ug = np.zeros((15, 15), bool)
        for p in pred:
            up = up | p
        for g in gt:
            ug = ug | g
        expected = 2 * np.sum(up & ug) / (up.sum() + ug.sum())
        assert foreground_dice(pred, gt, 15, 15) == expected


def test_fd_invariant_to_order_and_split():
    rng = np.random.default_rng(4)
    gt = [rng.random((15, 15)) < 0.3 for _ in range(3)]
    pred = [rng.random((15, 15)) < 0.3 for _ in range(3)]
    base = foreground_dice(pred, gt, 15, 15)
    assert foreground_dice(pred[::-1], gt[::-1], 15, 15) == base
    half = np.zeros((15, 15), bool)
    half[:8] = True
    split = [gt[0] & half, gt[0] & ~half | (gt[0] & half), gt[1], gt[2]]
    assert foreground_dice(pred, split, 15, 15) == base


def test_fd_mask_outside_canvas():
    with pytest.raises(InvalidInputError):
        foreground_dice([Mask(np.ones((3, 3), bool), (18, 18))], [], 20, 20)


def test_amd_examples():
    a = block(1, 1, 5, 5)
    assert average_multiobject_dice([a, a], [a, a]) == 1.0
    assert average_multiobject_dice([a, a], [a, block(10, 10, 5, 5)]) == 0.5


def test_amd_hand_computed_five_cells():
    gt = [block(0, 0, 4, 4), block(5, 0, 4, 4), block(10, 0, 4, 4), block(0, 10, 4, 4), block(10, 10, 5, 2)]
    pred = [block(0, 0, 4, 4), block(5, 0, 4, 2), block(11, 0, 4, 4), block(5, 10, 4, 4), block(10, 10, 5, 4)]
    # per-cell: 1, 2*8/24, 2*12/32, 0, 2*10/30
    expected = np.mean([1.0, 16 / 24, 24 / 32, 0.0, 20 / 30])
    assert average_multiobject_dice(pred, gt) == pytest.approx(expected, abs=1e-15)


def test_amd_with_pairing():
    a, b = block(0, 0, 4, 4), block(10, 10, 4, 4)
    assert average_multiobject_dice([b, a], [a, b], pairing=[1, 0]) == 1.0


@pytest.mark.parametrize("pairing", [[0, 0], [0], [0, 2]])
def test_amd_bad_pairing(pairing):
    a = block(0, 0, 4, 4)
    with pytest.raises(InvalidPairingError):
        per_cell_dice([a, a], [a, a], pairing)


def test_score_report_consistency():
    gt = [block(0, 0, 4, 4), block(6, 6, 5, 5)]
    pred = [block(1, 0, 4, 4), block(6, 6, 5, 5)]
    rep = score(pred, gt, 20, 20)
    assert rep.n_cells == 2
    assert rep.amd == pytest.approx(np.mean(rep.per_cell_dice), abs=1e-12)
    assert 0 <= rep.fd <= 1 and 0 <= rep.amd <= 1


def test_union_of_masks_with_origins():
    u = union([Mask(np.ones((2, 2), bool), (1, 1)), Mask(np.ones((2, 2), bool), (2, 2))], 5, 5)
    assert u.sum() == 7
