"""Contour rasterization and Dice-based segmentation scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidInputError(ValueError):
    pass


class InvalidPairingError(InvalidInputError):
    pass


@dataclass(frozen=True)
class Mask:
    """Boolean ``(H, W)`` mask whose top-left pixel sits at ``origin = (x, y)``."""

    bits: np.ndarray
    origin: tuple[int, int] = (0, 0)

    @property
    def shape(self):
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())

    def bbox(self):
        """Tight ``(x_min, y_min, x_max, y_max)`` in canvas pixels, or None if empty."""
        ys, xs = np.nonzero(self.bits)
        if xs.size == 0:
            return None
        ox, oy = self.origin
        return (int(xs.min()) + ox, int(ys.min()) + oy, int(xs.max()) + ox, int(ys.max()) + oy)

    def place(self, width: int, height: int) -> np.ndarray:
        """Paste onto a ``height x width`` canvas; bits falling outside raise."""
        out = np.zeros((height, width), dtype=bool)
        ox, oy = self.origin
        h, w = self.bits.shape
        ys, xs = np.nonzero(self.bits)
        xs, ys = xs + ox, ys + oy
        if xs.size and (xs.min() < 0 or ys.min() < 0 or xs.max() >= width or ys.max() >= height):
            raise InvalidInputError(f"mask at origin {self.origin} ({w}x{h}) exceeds {width}x{height} canvas")
        out[ys, xs] = True
        return out


@dataclass
class ScoreReport:
    fd: float
    amd: float
    per_cell_dice: list[float] = field(default_factory=list)

    @property
    def n_cells(self) -> int:
        return len(self.per_cell_dice)


def rasterize(poly: np.ndarray, width: int, height: int, origin=(0, 0)) -> Mask:
    """Even-odd scanline fill; a pixel is set iff its center lies inside ``poly``.

    ``poly`` is in the same coordinates as ``origin``; pixel ``(i, j)`` of the
    result has its center at ``(origin_x + j, origin_y + i)``.
    """
    bits = np.zeros((height, width), dtype=bool)
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return Mask(bits, tuple(origin))
    p = poly - np.asarray(origin, dtype=float)
    x0, y0 = p[:, 0], p[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    ok = y0 != y1
    x0, y0, x1, y1 = x0[ok], y0[ok], x1[ok], y1[ok]
    if x0.size == 0:
        return Mask(bits, tuple(origin))
    lo_row = max(int(np.ceil(min(y0.min(), y1.min()))), 0)
    hi_row = min(int(np.floor(max(y0.max(), y1.max()))), height - 1)
    cols = np.arange(width)
    for r in range(lo_row, hi_row + 1):
        # half-open rule: an edge spans rows with min(y) <= r < max(y)
        hit = (np.minimum(y0, y1) <= r) & (r < np.maximum(y0, y1))
        if not hit.any():
            continue
        t = (r - y0[hit]) / (y1[hit] - y0[hit])
        xs = np.sort(x0[hit] + t * (x1[hit] - x0[hit]))
        # crossings strictly left of each center; odd count => inside
        bits[r] = (np.searchsorted(xs, cols, side="left") % 2) == 1
    return Mask(bits, tuple(origin))


def _as_pair(a, b):
    if isinstance(a, Mask) and isinstance(b, Mask):
        if a.origin == b.origin and a.shape == b.shape:
            return a.bits, b.bits
        x0 = min(a.origin[0], b.origin[0])
        y0 = min(a.origin[1], b.origin[1])
        x1 = max(a.origin[0] + a.shape[1], b.origin[0] + b.shape[1])
        y1 = max(a.origin[1] + a.shape[0], b.origin[1] + b.shape[0])
        shift = lambda m: Mask(m.bits, (m.origin[0] - x0, m.origin[1] - y0))
        return shift(a).place(x1 - x0, y1 - y0), shift(b).place(x1 - x0, y1 - y0)
    a = a.bits if isinstance(a, Mask) else np.asarray(a, dtype=bool)
    b = b.bits if isinstance(b, Mask) else np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise InvalidInputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    """``2|A & B| / (|A| + |B|)``; two empty masks score 1."""
    a, b = _as_pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def union(masks, width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    for m in masks:
        out |= m.place(width, height) if isinstance(m, Mask) else np.asarray(m, dtype=bool)
    return out


def foreground_dice(pred, gt, width: int, height: int) -> float:
    """Dice of the union masks; overlapping cells count as foreground once."""
    return dice(union(pred, width, height), union(gt, width, height))


def average_multiobject_dice(pred, gt, pairing=None) -> float:
    """Mean per-cell Dice; ``pairing[i]`` is the GT index of prediction ``i``."""
    return float(np.mean(per_cell_dice(pred, gt, pairing))) if len(pred) else 1.0


def per_cell_dice(pred, gt, pairing=None) -> list[float]:
    if pairing is None:
        pairing = list(range(len(pred)))
    pairing = list(pairing)
    if len(pairing) != len(pred) or len(pred) != len(gt) or sorted(pairing) != list(range(len(gt))):
        raise InvalidPairingError(
            f"pairing must be a bijection between {len(pred)} predictions and {len(gt)} GT masks"
        )
    return [dice(pred[i], gt[j]) for i, j in enumerate(pairing)]


def score(pred, gt, width: int, height: int, pairing=None) -> ScoreReport:
    per = per_cell_dice(pred, gt, pairing)
    return ScoreReport(
        fd=foreground_dice(pred, gt, width, height),
        amd=float(np.mean(per)) if per else 1.0,
        per_cell_dice=per,
    )
