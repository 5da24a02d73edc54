"""Constrained fitting of the rod model to one tile.

Geometry ``(c_x, c_y, l1, l2, w, d, e)`` and the angle are minimized in
alternation with COBYLA; every stage starts from the incumbent so the
stage-end energies never increase.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .geometry import RodParams, basis_matrix, rod_control_points, spline_sample, N_CONTROL, SAMPLES_PER_SEGMENT
from .imageops import PIXEL_SIZE_UM, Tile
from .metrics import Mask, rasterize
from .objective import (
    DegenerateContourError,
    EnergyBreakdown,
    IntegralTables,
    ObjectiveConfig,
    build_tables,
    region_energy,
    total_energy,
)

log = logging.getLogger(__name__)

# Biological limits in micrometres.
LENGTH_RANGE_UM = (0.4, 2.0)
WIDTH_RANGE_UM = (0.7, 0.9)
BEND_MAX_UM = 0.5
INITIAL_WIDTH_PX = 17.0
ELONGATION_RATIO = 1.2
PENALTY = 1e12

GEOM_NAMES = ("c_x", "c_y", "l1", "l2", "w", "d", "e")


class InfeasibleError(ValueError):
    """The constraint set has an empty feasible region."""


class SegmentationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintSet:
    """Box bounds on the rod geometry plus ``l1 + l2 <= diag``.

    ``x_range``/``y_range`` bound the center (tile pixels).
    """

    l_min: float
    l_max: float
    w_min: float
    w_max: float
    de_max: float
    diag: float
    x_range: tuple[float, float]
    y_range: tuple[float, float]

    @classmethod
    def for_tile(cls, tile: Tile, pixel_size: float | None = None, **limits) -> "ConstraintSet":
        ps = pixel_size or tile.pixel_size
        h, w = tile.shape
        return cls.from_um(ps, diag=math.hypot(w, h), width=w, height=h, **limits)

    @classmethod
    def from_um(cls, pixel_size: float = PIXEL_SIZE_UM, diag: float = math.inf,
                width: float = math.inf, height: float = math.inf,
                length_um=LENGTH_RANGE_UM, width_um=WIDTH_RANGE_UM,
                bend_um: float = BEND_MAX_UM) -> "ConstraintSet":
        return cls(
            l_min=length_um[0] / pixel_size,
            l_max=length_um[1] / pixel_size,
            w_min=width_um[0] / pixel_size,
            w_max=width_um[1] / pixel_size,
            de_max=bend_um / pixel_size,
            diag=diag,
            x_range=(0.0, width - 1.0),
            y_range=(0.0, height - 1.0),
        )

    @classmethod
    def loose(cls, tile: Tile) -> "ConstraintSet":
        """No biological limits: only positivity and the center inside the tile."""
        h, w = tile.shape
        big = math.hypot(w, h)
        return cls(1.0, big, 1.0, big, big, 2.0 * big, (0.0, w - 1.0), (0.0, h - 1.0))

    def check(self):
        if not (self.l_min <= self.l_max and self.w_min <= self.w_max and self.de_max >= 0
                and self.diag >= 2 * self.l_min
                and self.x_range[0] <= self.x_range[1] and self.y_range[0] <= self.y_range[1]):
            raise InfeasibleError(f"empty feasible set: {self}")
        if not (self.l_min < self.l_max and self.w_min < self.w_max and self.de_max > 0 and self.diag > 0):
            raise InfeasibleError(f"feasible set has no interior: {self}")

    def bounds(self) -> list[tuple[float, float]]:
        return [self.x_range, self.y_range, (self.l_min, self.l_max), (self.l_min, self.l_max),
                (self.w_min, self.w_max), (-self.de_max, self.de_max), (-self.de_max, self.de_max)]

    def inequalities(self):
        return [lambda g: self.diag - g[2] - g[3]]

    def project(self, geom) -> np.ndarray:
        lo, hi = np.array(self.bounds()).T
        g = np.clip(np.asarray(geom, dtype=float), lo, hi)
        if g[2] + g[3] > self.diag:
            excess = g[2] + g[3] - self.diag
            room = g[2:4] - self.l_min
            g[2:4] -= excess * room / room.sum()
        return g

    def satisfied(self, theta: RodParams) -> bool:
        g = theta.to_vector()[:7]
        lo, hi = np.array(self.bounds()).T
        return bool(np.all(g >= lo) and np.all(g <= hi) and g[2] + g[3] <= self.diag)


@dataclass(frozen=True)
class OptimizerConfig:
    rounds: int = 5
    evals_per_stage: int = 60
    initial_trust_radius: float = 2.0
    final_trust_radius: float = 0.01
    angle_trust_scale: float = 0.1
    angle_first: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.evals_per_stage < len(GEOM_NAMES) + 2:
            raise ValueError("evals_per_stage must be >= dim + 2")
        if not 0 < self.final_trust_radius < self.initial_trust_radius:
            raise ValueError("need 0 < final_trust_radius < initial_trust_radius")


@dataclass
class SegmentationResult:
    theta: RodParams
    polyline: np.ndarray
    mask: Mask
    energy: EnergyBreakdown
    stage_energies: list[float] = field(default_factory=list)
    initial: RodParams | None = None


def constrained_minimize(f, x0, bounds=None, inequalities=(), cfg: OptimizerConfig | None = None,
                         project=None, max_evals: int | None = None, rhobeg: float | None = None):
    """Derivative-free minimization of ``f`` subject to bounds and ``g(x) >= 0``.

    Wraps COBYLA and returns the best *strictly* feasible point it evaluated,
    so the result always satisfies the constraints and never scores worse than
    the (projected) start. Returns ``(x_best, f_best)``.
    """
    cfg = cfg or OptimizerConfig()
    x0 = np.asarray(x0, dtype=float)
    lo = hi = None
    if bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in zip(*bounds))
        if np.any(lo > hi):
            raise InfeasibleError("lower bound above upper bound")
        x0 = np.clip(x0, lo, hi)
    if project is not None:
        x0 = np.asarray(project(x0), dtype=float)

    def feasible(x):
        if lo is not None and (np.any(x < lo) or np.any(x > hi)):
            return False
        return all(g(x) >= 0 for g in inequalities)

    if not feasible(x0):
        raise InfeasibleError("could not find a feasible starting point")

    best = [x0.copy(), float(f(x0))]

    def wrapped(x):
        val = float(f(x))
        if val < best[1] and feasible(x):
            best[0], best[1] = np.array(x, dtype=float), val
        return val

    cons = [{"type": "ineq", "fun": g} for g in inequalities]
    res = minimize(
        wrapped,
        x0,
        method="COBYLA",
        bounds=bounds,
        constraints=cons,
        options={
            "rhobeg": rhobeg or cfg.initial_trust_radius,
            "tol": cfg.final_trust_radius,
            "maxiter": max_evals or cfg.evals_per_stage,
        },
    )
    x_end = np.asarray(res.x, dtype=float)
    if lo is not None:
        x_end = np.clip(x_end, lo, hi)
    if project is not None:
        x_end = np.asarray(project(x_end), dtype=float)
    if not np.array_equal(x_end, best[0]) and feasible(x_end):
        wrapped(x_end)
    return best[0], best[1]


class _Evaluator:
    """Energy of a parameter vector on one tile; degenerate contours get a penalty."""

    def __init__(self, tile, tables, obj_cfg, rotation_mode, n):
        self.tile, self.tables, self.cfg = tile, tables, obj_cfg
        self.rotation_mode = rotation_mode
        self.basis = basis_matrix(N_CONTROL, n)

    def polyline(self, vec):
        return spline_sample(rod_control_points(RodParams.from_vector(vec), self.rotation_mode), self.basis)

    def breakdown(self, vec) -> EnergyBreakdown:
        return total_energy(self.polyline(vec), self.tile, self.tables, self.cfg)

    def __call__(self, vec) -> float:
        try:
            val = self.breakdown(vec).total
        except (DegenerateContourError, ValueError):
            return PENALTY
        return val if math.isfinite(val) else PENALTY


def initial_guess(tile: Tile, tables: IntegralTables | None = None,
                  constraints: ConstraintSet | None = None, rotation_mode: str = "proper",
                  n: int = SAMPLES_PER_SEGMENT, alternative: bool = False) -> RodParams:
    """Straight symmetric rod centred in the tile, oriented by the box shape.

    Elongated boxes (long side > 1.2 x short side) get 0 or 90 degrees;
    otherwise +-45 degrees, whichever encloses the lower mean geodesic
    distance. ``alternative`` picks the other diagonal.
    """
    h, w = tile.shape
    constraints = constraints or ConstraintSet.for_tile(tile)
    tables = tables or build_tables(tile)
    longer, shorter = max(w, h), min(w, h)
    half = 0.5 * longer
    geom = constraints.project([(w - 1) / 2.0, (h - 1) / 2.0, half, half, INITIAL_WIDTH_PX, 0.0, 0.0])
    if longer > ELONGATION_RATIO * shorter:
        alpha = 0.0 if h >= w else math.pi / 2
        return RodParams.from_vector([*geom, alpha])
    basis = basis_matrix(N_CONTROL, n)
    scored = []
    for alpha in (math.pi / 4, -math.pi / 4):
        theta = RodParams.from_vector([*geom, alpha])
        poly = spline_sample(rod_control_points(theta, rotation_mode), basis)
        try:
            f_ge = region_energy(poly, tables, "geodesic")
        except DegenerateContourError:
            f_ge = math.inf
        scored.append((f_ge, alpha, theta))
    scored.sort(key=lambda s: s[0])
    return scored[1 if alternative else 0][2]


def wrap_angle(a: float) -> float:
    return float((a + math.pi) % (2 * math.pi) - math.pi)


def _fit(start: RodParams, ev: _Evaluator, constraints: ConstraintSet, cfg: OptimizerConfig):
    geom = constraints.project(start.to_vector()[:7])
    alpha = start.alpha
    energy = ev(np.append(geom, alpha))
    stages = [energy]
    bounds = constraints.bounds()
    ineq = constraints.inequalities()
    for _ in range(cfg.rounds):
        for stage in (("angle", "geometry") if cfg.angle_first else ("geometry", "angle")):
            if stage == "geometry":
                geom, energy = constrained_minimize(
                    lambda g: ev(np.append(g, alpha)), geom, bounds, ineq, cfg,
                    project=constraints.project,
                )
            else:
                a, energy = constrained_minimize(
                    lambda a: ev(np.append(geom, a[0])), [alpha], None, (), cfg,
                    rhobeg=cfg.initial_trust_radius * cfg.angle_trust_scale,
                )
                alpha = float(a[0])
            stages.append(energy)
    return np.append(geom, alpha), stages


def segment_cell(tile: Tile, cfg: OptimizerConfig | None = None, obj_cfg: ObjectiveConfig | None = None,
                 constraints: ConstraintSet | None = None, tables: IntegralTables | None = None,
                 rotation_mode: str = "proper", n: int = SAMPLES_PER_SEGMENT) -> SegmentationResult:
    """Fit the rod model to a complete tile."""
    cfg = cfg or OptimizerConfig()
    obj_cfg = obj_cfg or ObjectiveConfig()
    if not tile.complete:
        raise ValueError("tile channels are not filled; use imageops.prepare_tile")
    constraints = constraints or ConstraintSet.for_tile(tile)
    constraints.check()
    tables = tables or build_tables(tile)
    ev = _Evaluator(tile, tables, obj_cfg, rotation_mode, n)

    last_error = None
    for alternative in (False, True):
        start = initial_guess(tile, tables, constraints, rotation_mode, n, alternative=alternative)
        vec, stages = _fit(start, ev, constraints, cfg)
        vec[7] = wrap_angle(vec[7])
        try:
            energy = ev.breakdown(vec)
        except DegenerateContourError as exc:
            last_error = exc
            log.info("degenerate fit from %s, retrying from the other diagonal", start)
            continue
        theta = RodParams.from_vector(vec)
        poly = ev.polyline(vec)
        h, w = tile.shape
        # rasterize in image coordinates so the saved contour reproduces the mask bit for bit
        mask = rasterize(poly + np.asarray(tile.origin, dtype=float), w, h, origin=tile.origin)
        return SegmentationResult(
            theta=theta,
            polyline=poly,
            mask=mask,
            energy=energy,
            stage_energies=stages,
            initial=start,
        )
    raise SegmentationFailed(f"no valid contour for tile at {tile.origin}: {last_error}")
