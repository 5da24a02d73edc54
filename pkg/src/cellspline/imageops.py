"""Per-cell tile extraction and the image channels used by the energy."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

GRADIENT_SIGMA = 3.0
GRADIENT_CLIP = 0.45
GEODESIC_LAMBDA = 0.8
DEFAULT_PAD = 5
PIXEL_SIZE_UM = 0.065


class InvalidBoxError(ValueError):
    pass


class InvalidMarkerError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel box in full-image coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBoxError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))


@dataclass(frozen=True)
class Tile:
    """Padded crop around one cell plus its derived channels.

    ``intensity``, ``gradient`` and ``geodesic`` are ``(H, W)`` arrays in
    [0, 1]; ``marker`` is ``(x, y)`` in tile pixels and ``origin`` is the tile's
    top-left pixel ``(x, y)`` in the full image.
    """

    intensity: np.ndarray
    origin: tuple[int, int]
    marker: tuple[int, int]
    box: BoundingBox
    pixel_size: float = PIXEL_SIZE_UM
    gradient: np.ndarray | None = None
    geodesic: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensity.shape

    @property
    def complete(self) -> bool:
        return self.gradient is not None and self.geodesic is not None

    def with_channels(self, **kw) -> "Tile":
        return replace(self, **kw)


def minmax_normalize(a: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant array maps to zeros."""
    a = np.asarray(a, dtype=float)
    lo, hi = float(a.min()), float(a.max())
    if hi <= lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def extract_tile(image: np.ndarray, box: BoundingBox, pad: int = DEFAULT_PAD,
                 pixel_size: float = PIXEL_SIZE_UM) -> Tile:
    """Crop ``box`` grown by ``pad`` (clamped to the image) and normalize it."""
    h, w = image.shape
    if pad < 0:
        raise InvalidBoxError("pad must be >= 0")
    if box.x_max < 0 or box.y_max < 0 or box.x_min >= w or box.y_min >= h:
        raise InvalidBoxError(f"box {box} lies outside the {w}x{h} image")
    x0, y0 = max(box.x_min - pad, 0), max(box.y_min - pad, 0)
    x1, y1 = min(box.x_max + pad, w - 1), min(box.y_max + pad, h - 1)
    if x1 <= x0 or y1 <= y0:
        raise InvalidBoxError(f"box {box} has no extent inside the image")
    crop = minmax_normalize(image[y0 : y1 + 1, x0 : x1 + 1])
    marker = ((x1 - x0) // 2, (y1 - y0) // 2)
    return Tile(intensity=crop, origin=(int(x0), int(y0)), marker=(int(marker[0]), int(marker[1])), box=box, pixel_size=pixel_size)


def gradient_magnitude(intensity: np.ndarray) -> np.ndarray:
    """Central-difference gradient norm, one-sided at the borders."""
    gy, gx = np.gradient(np.asarray(intensity, dtype=float))
    return np.hypot(gx, gy)


def gradient_channel(intensity: np.ndarray, sigma: float = GRADIENT_SIGMA,
                     clip: float = GRADIENT_CLIP) -> np.ndarray:
    """Edge channel: |grad I| normalized, smoothed, clipped and rescaled to [0, 1]."""
    g = minmax_normalize(gradient_magnitude(intensity))
    g = ndimage.gaussian_filter(g, sigma, mode="nearest", truncate=3.0)
    return np.clip(g, 0.0, clip) / clip


def _step_cost(a, b, dist2, lam):
    return np.sqrt((1 - lam) ** 2 * dist2 + lam**2 * (a - b) ** 2)


def _row_sweep(d_row, img_row, lam, reverse):
    """Relax along one row in scan order; exact min-plus prefix scan."""
    if reverse:
        d_row, img_row = d_row[::-1], img_row[::-1]
    step = _step_cost(img_row[1:], img_row[:-1], 1.0, lam)
    s = np.concatenate(([0.0], np.cumsum(step)))
    out = s + np.minimum.accumulate(d_row - s)
    return out[::-1] if reverse else out


def _pass(d, img, lam, reverse):
    h, w = d.shape
    rows = range(h - 1, -1, -1) if reverse else range(h)
    step_y = 1 if reverse else -1
    for y in rows:
        yp = y + step_y
        if 0 <= yp < h:
            cur = d[y]
            for dx in (-1, 0, 1):
                lo, hi = max(0, -dx), min(w, w - dx)
                cand = d[yp, lo + dx : hi + dx] + _step_cost(
                    img[y, lo:hi], img[yp, lo + dx : hi + dx], dx * dx + 1.0, lam
                )
                np.minimum(cur[lo:hi], cand, out=cur[lo:hi])
        d[y] = _row_sweep(d[y], img[y], lam, reverse)


def geodesic_distance(intensity: np.ndarray, marker, lam: float = GEODESIC_LAMBDA,
                      max_passes: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Raster-scan geodesic distance from ``marker`` (unnormalized).

    Step cost between 8-neighbours ``p, q`` is
    ``sqrt((1-lam)^2 |p-q|^2 + lam^2 (I(p)-I(q))^2)``. Passes alternate
    forward/backward until no value changes by more than ``tol`` or
    ``max_passes`` passes are done.
    """
    img = np.asarray(intensity, dtype=float)
    h, w = img.shape
    mx, my = int(round(marker[0])), int(round(marker[1]))
    if not (0 <= mx < w and 0 <= my < h):
        raise InvalidMarkerError(f"marker {marker} outside {w}x{h} image")
    d = np.full((h, w), np.inf)
    d[my, mx] = 0.0
    for i in range(max_passes):
        before = d.copy()
        _pass(d, img, lam, reverse=bool(i % 2))
        if i > 0 and np.max(np.abs(d - before)) <= tol:
            break
    return d


def geodesic_channel(intensity: np.ndarray, marker, lam: float = GEODESIC_LAMBDA) -> np.ndarray:
    return minmax_normalize(geodesic_distance(intensity, marker, lam))


def prepare_tile(image: np.ndarray, box: BoundingBox, pad: int = DEFAULT_PAD,
                 pixel_size: float = PIXEL_SIZE_UM, lam: float = GEODESIC_LAMBDA,
                 sigma: float = GRADIENT_SIGMA, clip: float = GRADIENT_CLIP) -> Tile:
    """Extract a tile and fill the gradient and geodesic channels."""
    tile = extract_tile(image, box, pad, pixel_size)
    return tile.with_channels(
        gradient=gradient_channel(tile.intensity, sigma, clip),
        geodesic=geodesic_channel(tile.intensity, tile.marker, lam),
    )
