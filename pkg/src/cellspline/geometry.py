"""Closed uniform cubic B-splines and the parametric cell shape models.

Coordinates are ``(x, y)`` in pixels with ``y`` pointing down the image rows.
Control polygons are ``(N, 2)`` arrays; a basis matrix is ``(N, N * n)`` so that
sampling is the product ``P.T @ B``.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from functools import lru_cache

import numpy as np

ROTATION_MODES = ("printed", "proper")
N_CONTROL = 6
SAMPLES_PER_SEGMENT = 10

# Knot points of a regular hexagon sit at 5/6 of its radius.
OVOID_SCALE = 3.0 / (2.0 + math.cos(math.pi / 3.0))


class InvalidParameterError(ValueError):
    """Raised for non-finite or out-of-domain geometric parameters."""


@dataclass(frozen=True)
class RodParams:
    """Bent-rod parameters ``[c_x, c_y, l1, l2, w, d, e, alpha]`` in pixels/radians."""

    c_x: float
    c_y: float
    l1: float
    l2: float
    w: float
    d: float
    e: float
    alpha: float

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidParameterError(f"non-finite rod parameter in {vals}")
        if self.l1 <= 0 or self.l2 <= 0 or self.w <= 0:
            raise InvalidParameterError(
                f"l1, l2, w must be positive (got {self.l1}, {self.l2}, {self.w})"
            )

    @classmethod
    def from_vector(cls, v) -> "RodParams":
        return cls(*(float(x) for x in v))

    def to_vector(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def replace(self, **kw) -> "RodParams":
        d = dict(zip(FIELD_NAMES, astuple(self)))
        d.update(kw)
        return RodParams(**d)


FIELD_NAMES = ("c_x", "c_y", "l1", "l2", "w", "d", "e", "alpha")


def transform_matrix(alpha: float, rotation_mode: str = "proper") -> np.ndarray:
    """2x2 matrix applied to the centered template.

    ``printed`` is ``[[cos, -sin], [sin, -cos]]`` exactly as published; it is
    singular at ``alpha = +-pi/4``. ``proper`` is the ordinary rotation.
    """
    c, s = math.cos(alpha), math.sin(alpha)
    if rotation_mode == "printed":
        return np.array([[c, -s], [s, -c]])
    if rotation_mode == "proper":
        return np.array([[c, -s], [s, c]])
    raise InvalidParameterError(f"unknown rotation_mode {rotation_mode!r}")


def rod_template(theta: RodParams) -> np.ndarray:
    """Unrotated control points P1..P6 as a ``(6, 2)`` array."""
    hw = theta.w / 2.0
    xs = [hw, hw - theta.d, -hw - theta.d, -hw, -hw - theta.e, hw - theta.e]
    ys = [0.0, theta.l1, theta.l1, 0.0, -theta.l2, -theta.l2]
    return np.column_stack([xs, ys]) + [theta.c_x, theta.c_y]


def rod_control_points(theta: RodParams, rotation_mode: str = "proper") -> np.ndarray:
    """Control polygon of the bent-rod model, shape ``(6, 2)``."""
    if not isinstance(theta, RodParams):
        theta = RodParams.from_vector(theta)
    c = np.array([theta.c_x, theta.c_y])
    m = transform_matrix(theta.alpha, rotation_mode)
    return (rod_template(theta) - c) @ m.T + c


def ovoid_control_points(center, r_major: float, r_minor: float, alpha: float) -> np.ndarray:
    """Six control points for a round-to-ovoid cell.

    Points sit at 60 degree steps on an ellipse with semi-axes scaled by
    ``OVOID_SCALE`` so the spline's knot points land on the target ellipse.
    """
    if not (math.isfinite(r_major) and math.isfinite(r_minor) and math.isfinite(alpha)):
        raise InvalidParameterError("non-finite ovoid parameter")
    if r_minor <= 0 or r_major <= 0:
        raise InvalidParameterError("ovoid radii must be positive")
    if r_major < r_minor:
        raise InvalidParameterError("r_major must be >= r_minor")
    phi = np.arange(N_CONTROL) * (2.0 * math.pi / N_CONTROL)
    local = np.column_stack([r_major * np.cos(phi), r_minor * np.sin(phi)]) * OVOID_SCALE
    c, s = math.cos(alpha), math.sin(alpha)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(center, dtype=float)


def cubic_basis(t):
    """The four uniform cubic B-spline weights at local parameter ``t`` in [0, 1)."""
    t = np.asarray(t, dtype=float)
    return np.stack(
        [
            (1 - t) ** 3 / 6.0,
            (3 * t**3 - 6 * t**2 + 4) / 6.0,
            (-3 * t**3 + 3 * t**2 + 3 * t + 1) / 6.0,
            t**3 / 6.0,
        ]
    )


@lru_cache(maxsize=16)
def _basis_matrix_cached(n_ctrl: int, n: int) -> np.ndarray:
    b = np.zeros((n_ctrl, n_ctrl * n))
    w = cubic_basis(np.arange(n) / n)  # (4, n)
    for j in range(n_ctrl):
        for k in range(4):
            b[(j + k) % n_ctrl, j * n : (j + 1) * n] = w[k]
    b.setflags(write=False)
    return b


def basis_matrix(n_ctrl: int = N_CONTROL, n: int = SAMPLES_PER_SEGMENT) -> np.ndarray:
    """Discrete closed-spline basis ``B`` of shape ``(n_ctrl, n_ctrl * n)``.

    Column ``j * n + s`` holds the weights at ``t = s / n`` of segment ``j``,
    placed on rows ``j .. j + 3`` (cyclic). The result is cached and read-only.
    """
    if n_ctrl < 4:
        raise InvalidParameterError(f"closed cubic spline needs >= 4 control points, got {n_ctrl}")
    if n < 1:
        raise InvalidParameterError(f"samples per segment must be >= 1, got {n}")
    return _basis_matrix_cached(int(n_ctrl), int(n))


def signed_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for the orientation used throughout the package."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def spline_sample(ctrl: np.ndarray, basis: np.ndarray | None = None, normalize: bool = True) -> np.ndarray:
    """Sample the closed spline: returns ``(N * n, 2)`` vertices.

    With ``normalize`` the vertex order is reversed when needed so the
    polyline has non-negative signed area.
    """
    ctrl = np.asarray(ctrl, dtype=float)
    if basis is None:
        basis = basis_matrix(ctrl.shape[0])
    if ctrl.ndim != 2 or ctrl.shape[1] != 2 or ctrl.shape[0] != basis.shape[0]:
        raise InvalidParameterError(
            f"control polygon {ctrl.shape} does not match basis {basis.shape}"
        )
    pts = basis.T @ ctrl
    if normalize and signed_area(pts) < 0:
        pts = pts[::-1].copy()
    return pts


def rod_polyline(theta, rotation_mode: str = "proper", n: int = SAMPLES_PER_SEGMENT) -> np.ndarray:
    return spline_sample(rod_control_points(theta, rotation_mode), basis_matrix(N_CONTROL, n))


def segment_lengths(poly: np.ndarray) -> np.ndarray:
    return np.hypot(*(np.roll(poly, -1, axis=0) - poly).T)
