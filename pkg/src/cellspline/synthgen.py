"""Synthetic bright-field colonies with exact ground truth.

Cells are bent rods drawn darker than the background with a one-pixel rim
that is darker still, so the edge term has something to lock onto.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import RodParams, rod_polyline
from .imageops import DEFAULT_PAD, BoundingBox
from .metrics import Mask, rasterize
from .optimizer import ConstraintSet

MAX_REJECTIONS = 10_000
MAX_OVERLAP = 0.2


class CapacityError(RuntimeError):
    """Could not place the requested number of cells on the canvas."""


@dataclass
class SceneCell:
    theta: RodParams
    mask: Mask
    box: BoundingBox


@dataclass
class ColonyScene:
    image: np.ndarray
    cells: list[SceneCell]
    background_level: float
    cell_level: float
    rim_level: float
    noise_sigma: float
    seed: int
    rotation_mode: str = "proper"
    meta: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def masks(self) -> list[Mask]:
        return [c.mask for c in self.cells]

    @property
    def boxes(self) -> list[BoundingBox]:
        return [c.box for c in self.cells]

    def label_image(self) -> np.ndarray:
        """Labels 1..n (later cells on top), 0 for background."""
        out = np.zeros(self.image.shape, dtype=np.uint16)
        for i, c in enumerate(self.cells, start=1):
            out[c.mask.place(self.width, self.height)] = i
        return out


def cell_mask(theta: RodParams, rotation_mode: str = "proper") -> Mask:
    """Rasterize the rod's sampled spline on a window just large enough for it."""
    poly = rod_polyline(theta, rotation_mode)
    x0, y0 = np.floor(poly.min(axis=0)).astype(int)
    x1, y1 = np.ceil(poly.max(axis=0)).astype(int)
    m = rasterize(poly, x1 - x0 + 1, y1 - y0 + 1, origin=(x0, y0))
    return crop_mask(m)


def crop_mask(m: Mask) -> Mask:
    ys, xs = np.nonzero(m.bits)
    if xs.size == 0:
        return m
    return Mask(m.bits[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1].copy(),
                (m.origin[0] + int(xs.min()), m.origin[1] + int(ys.min())))


def sample_theta(rng: np.random.Generator, constraints: ConstraintSet, center) -> RodParams:
    c = constraints
    return RodParams(
        c_x=float(center[0]),
        c_y=float(center[1]),
        l1=rng.uniform(c.l_min, c.l_max),
        l2=rng.uniform(c.l_min, c.l_max),
        w=rng.uniform(c.w_min, c.w_max),
        d=rng.uniform(-c.de_max, c.de_max),
        e=rng.uniform(-c.de_max, c.de_max),
        alpha=rng.uniform(-math.pi / 2, math.pi / 2),
    )


def _overlap(a: Mask, b: Mask) -> int:
    ax0, ay0 = a.origin
    bx0, by0 = b.origin
    x0, y0 = max(ax0, bx0), max(ay0, by0)
    x1 = min(ax0 + a.shape[1], bx0 + b.shape[1])
    y1 = min(ay0 + a.shape[0], by0 + b.shape[0])
    if x1 <= x0 or y1 <= y0:
        return 0
    sa = a.bits[y0 - ay0 : y1 - ay0, x0 - ax0 : x1 - ax0]
    sb = b.bits[y0 - by0 : y1 - by0, x0 - bx0 : x1 - bx0]
    return int(np.logical_and(sa, sb).sum())


def rim_of(bits: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask."""
    padded = np.pad(bits, 1)
    inner = ndimage.binary_erosion(padded, structure=ndimage.generate_binary_structure(2, 1))
    return (padded & ~inner)[1:-1, 1:-1]


def render_scene(n_cells: int, width: int, height: int, constraints: ConstraintSet | None = None,
                 levels: tuple[float, float] = (0.8, 0.45), rim_level: float = 0.25,
                 noise_sigma: float = 0.02, seed: int = 0, margin: int = DEFAULT_PAD,
                 max_overlap: float = MAX_OVERLAP, rotation_mode: str = "proper") -> ColonyScene:
    """Place ``n_cells`` random rods and render the image.

    Every rod is sampled inside ``constraints`` and kept at least ``margin``
    pixels from the canvas border so its padded box fits. Pairwise overlap
    stays within ``max_overlap`` of the smaller cell.
    """
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    bg, cell = levels
    if not bg > cell >= rim_level:
        raise ValueError("need background > cell >= rim levels")
    constraints = constraints or ConstraintSet.from_um()
    rng = np.random.default_rng(seed)
    cells: list[SceneCell] = []
    rejections = 0
    while len(cells) < n_cells:
        if rejections >= MAX_REJECTIONS:
            raise CapacityError(
                f"placed {len(cells)}/{n_cells} cells on {width}x{height} after {rejections} rejections"
            )
        theta = sample_theta(rng, constraints, rng.uniform([0, 0], [width - 1, height - 1]))
        mask = cell_mask(theta, rotation_mode)
        x0, y0, x1, y1 = mask.bbox()
        if x0 < margin or y0 < margin or x1 > width - 1 - margin or y1 > height - 1 - margin:
            rejections += 1
            continue
        box = BoundingBox(x0, y0, x1, y1)
        if theta.l1 + theta.l2 > math.hypot(box.width + 2 * margin, box.height + 2 * margin):
            rejections += 1
            continue
        n = mask.count()
        if any(_overlap(mask, c.mask) > max_overlap * min(n, c.mask.count()) for c in cells):
            rejections += 1
            continue
        cells.append(SceneCell(theta, mask, box))

    image = np.full((height, width), bg, dtype=float)
    for c in cells:
        ox, oy = c.mask.origin
        h, w = c.mask.shape
        view = image[oy : oy + h, ox : ox + w]
        view[c.mask.bits] = cell
        view[rim_of(c.mask.bits)] = rim_level
    if noise_sigma > 0:
        image = np.clip(image + rng.normal(0.0, noise_sigma, image.shape), 0.0, 1.0)
    return ColonyScene(image, cells, bg, cell, rim_level, noise_sigma, seed, rotation_mode,
                       meta={"rejections": rejections})


def canvas_for(n_cells: int, density: float = 0.25) -> int:
    """Square canvas side that fits ``n_cells`` average rods at roughly ``density`` coverage."""
    return max(96, int(math.ceil(math.sqrt(n_cells * 420.0 / density))))
