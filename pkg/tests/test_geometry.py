import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cellspline.geometry import (
    OVOID_SCALE,
    InvalidParameterError,
    RodParams,
    basis_matrix,
    cubic_basis,
    ovoid_control_points,
    rod_control_points,
    rod_polyline,
    signed_area,
    spline_sample,
    transform_matrix,
)

from . import oracles

finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(1.0, 30.0)


@st.composite
def rods(draw):
    return RodParams(draw(finite), draw(finite), draw(positive), draw(positive), draw(st.floats(1.0, 15.0)),
                     draw(st.floats(-7.0, 7.0)), draw(st.floats(-7.0, 7.0)), draw(st.floats(-4.0, 4.0)))


def test_printed_matrix_at_zero_negates_y():
    theta = RodParams(0, 0, 1, 1, 2, 0, 0, 0)
    got = rod_control_points(theta, "printed")
    expected = [(1, 0), (1, -1), (-1, -1), (-1, 0), (-1, 1), (1, 1)]
    np.testing.assert_allclose(got, expected, atol=1e-15)


def test_template_columns_at_zero_proper():
    theta = RodParams(0, 0, 1, 1, 2, 0, 0, 0)
    expected = [(1, 0), (1, 1), (-1, 1), (-1, 0), (-1, -1), (1, -1)]
    np.testing.assert_allclose(rod_control_points(theta, "proper"), expected, atol=1e-15)


@pytest.mark.parametrize("mode", ["printed", "proper"])
def test_rod_points_match_scalar_oracle(mode):
    theta = RodParams(10, 10, 3, 2, 2, 1, 0.5, math.pi / 2)
    np.testing.assert_allclose(rod_control_points(theta, mode),
                               oracles.rod_points(10, 10, 3, 2, 2, 1, 0.5, math.pi / 2, mode), atol=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 0.3, math.pi / 2, 2.5, -1.0])
@pytest.mark.parametrize("mode", ["printed", "proper"])
def test_center_is_fixed_point(alpha, mode):
    # with w = 2d the second template column sits on the centre
    theta = RodParams(4.0, -3.0, 0.0 + 1e-9, 2.0, 2.0, 1.0, 0.0, alpha)
    pts = rod_control_points(theta, mode)
    # column 2 is (w/2 - d, l1) = (0, ~0)
    np.testing.assert_allclose(pts[1], (4.0, -3.0), atol=1e-8)


def test_printed_matrix_is_singular_at_45_degrees():
    assert abs(np.linalg.det(transform_matrix(math.pi / 4, "printed"))) < 1e-15
    assert np.linalg.det(transform_matrix(math.pi / 4, "proper")) == pytest.approx(1.0)


def test_invalid_parameters():
    with pytest.raises(InvalidParameterError):
        RodParams(0, 0, 1, 1, 1, 0, float("nan"), 0)
    with pytest.raises(InvalidParameterError):
        RodParams(0, 0, 1, -1, 1, 0, 0, 0)
    with pytest.raises(InvalidParameterError):
        RodParams(0, 0, 1, 1, 0, 0, 0, 0)
    with pytest.raises(InvalidParameterError):
        transform_matrix(0.0, "mirror")


def test_straight_rod_symmetric_in_x():
    pts = rod_control_points(RodParams(0, 0, 3, 3, 2, 0, 0, 0))
    mirrored = pts * [-1, 1]
    # P1<->P4, P2<->P3, P5<->P6
    np.testing.assert_allclose(mirrored[[3, 2, 1, 0, 5, 4]], pts, atol=1e-15)


@given(rods())
def test_proper_rotation_covariance(theta):
    base = rod_control_points(theta.replace(alpha=0.0))
    c = np.array([theta.c_x, theta.c_y])
    rot = transform_matrix(theta.alpha, "proper")
    np.testing.assert_allclose(rod_control_points(theta), (base - c) @ rot.T + c, atol=1e-9)


@given(rods())
def test_rod_polyline_positive_area(theta):
    assert signed_area(rod_polyline(theta)) > 0


# --- basis -------------------------------------------------------------------

def test_basis_partition_of_unity_and_range():
    b = basis_matrix(6, 10)
    np.testing.assert_allclose(b.sum(axis=0), 1.0, atol=1e-15)
    assert b.min() >= 0 and b.max() <= 1
    assert b.shape == (6, 60)


def test_basis_at_knot():
    np.testing.assert_allclose(cubic_basis(0.0), [1 / 6, 4 / 6, 1 / 6, 0], atol=1e-15)


def test_basis_column_matches_de_boor():
    b = basis_matrix(6, 10)
    j, s = 2, 5
    np.testing.assert_allclose(b[:, j * 10 + s], oracles.closed_cubic_basis_column(6, j, s / 10), atol=1e-12)


def test_basis_all_columns_match_de_boor():
    b = basis_matrix(6, 10)
    for col in range(60):
        j, s = divmod(col, 10)
        np.testing.assert_allclose(b[:, col], oracles.closed_cubic_basis_column(6, j, s / 10), atol=1e-12)


def test_basis_rejects_small_n():
    with pytest.raises(InvalidParameterError):
        basis_matrix(3, 10)
    with pytest.raises(InvalidParameterError):
        basis_matrix(6, 0)


def test_basis_is_read_only():
    with pytest.raises(ValueError):
        basis_matrix(6, 10)[0, 0] = 2.0


# --- sampling ------------------------------------------------------------------

def test_constant_control_points():
    pts = np.tile([5.0, 7.0], (6, 1))
    np.testing.assert_allclose(spline_sample(pts), np.tile([5.0, 7.0], (60, 1)), atol=1e-12)


def test_knot_values():
    rng = np.random.default_rng(1)
    P = rng.normal(size=(6, 2)) * 10
    samples = spline_sample(P, normalize=False)
    for i in range(6):
        expected = (P[i] + 4 * P[(i + 1) % 6] + P[(i + 2) % 6]) / 6
        np.testing.assert_allclose(samples[i * 10], expected, atol=1e-12)


def test_random_polygons_match_de_boor():
    rng = np.random.default_rng(7)
    b = basis_matrix(6, 10)
    for _ in range(100):
        P = rng.uniform(-20, 20, size=(6, 2))
        got = spline_sample(P, b, normalize=False)
        for col in range(60):
            np.testing.assert_allclose(got[col], oracles.closed_cubic_point(P, col / 10), atol=1e-10)


def test_orientation_normalized():
    P = rod_control_points(RodParams(0, 0, 5, 5, 4, 0, 0, 0))
    assert signed_area(spline_sample(P[::-1])) > 0
    assert signed_area(spline_sample(P)) > 0


def test_dimension_mismatch():
    with pytest.raises(InvalidParameterError):
        spline_sample(np.zeros((5, 2)), basis_matrix(6, 10))


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.integers(0, 2**31 - 1))
def test_affine_covariance(coeffs, seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-20, 20, size=(6, 2))
    A = np.array(coeffs[:4]).reshape(2, 2)
    t = np.array(coeffs[4:])
    left = spline_sample(P @ A.T + t, normalize=False)
    right = spline_sample(P, normalize=False) @ A.T + t
    np.testing.assert_allclose(left, right, atol=1e-9)


# --- ovoid -----------------------------------------------------------------------

def test_ovoid_scale_constant():
    assert OVOID_SCALE == pytest.approx(1.2)


def test_circle_is_sixfold_symmetric_and_knots_hit_radius():
    r = 7.0
    poly = spline_sample(ovoid_control_points((3.0, -2.0), r, r, 0.4), normalize=False)
    rad = np.hypot(poly[:, 0] - 3.0, poly[:, 1] + 2.0).reshape(6, 10)
    np.testing.assert_allclose(rad, np.tile(rad[0], (6, 1)), atol=1e-12)
    np.testing.assert_allclose(rad[:, 0], r, atol=1e-12)
    # a 6-point cubic spline is not a circle: the mid-segment dip stays below 1%
    assert np.ptp(rad) / r < 0.01


def test_ovoid_half_turn_same_point_set():
    a = spline_sample(ovoid_control_points((0, 0), 10, 6, 0.0))
    b = spline_sample(ovoid_control_points((0, 0), 10, 6, math.pi))
    key = lambda p: np.round(p, 9)[np.lexsort(np.round(p, 9).T)]
    np.testing.assert_allclose(key(a), key(b), atol=1e-9)


def test_ovoid_bbox_matches_rotated_ellipse():
    alpha = math.pi / 6
    poly = spline_sample(ovoid_control_points((0, 0), 10, 6, alpha), basis_matrix(6, 50))
    t = np.linspace(0, 2 * np.pi, 100_000)
    c, s = math.cos(alpha), math.sin(alpha)
    ex = np.column_stack([10 * np.cos(t) * c - 6 * np.sin(t) * s, 10 * np.cos(t) * s + 6 * np.sin(t) * c])
    np.testing.assert_allclose(np.ptp(poly, axis=0), np.ptp(ex, axis=0), rtol=0.01)


def test_ovoid_invalid_radii():
    with pytest.raises(InvalidParameterError):
        ovoid_control_points((0, 0), 3, 5, 0)
    with pytest.raises(InvalidParameterError):
        ovoid_control_points((0, 0), 3, 0, 0)
