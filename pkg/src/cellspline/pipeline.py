"""Segment every box of an image, optionally across worker processes."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import SAMPLES_PER_SEGMENT
from .imageops import (DEFAULT_PAD, GEODESIC_LAMBDA, GRADIENT_CLIP, GRADIENT_SIGMA, PIXEL_SIZE_UM,
                       BoundingBox, prepare_tile)
from .objective import ObjectiveConfig
from .optimizer import (BEND_MAX_UM, LENGTH_RANGE_UM, WIDTH_RANGE_UM, ConstraintSet, OptimizerConfig,
                        SegmentationResult, segment_cell)

log = logging.getLogger(__name__)

# Tuned on synthetic single-cell scenes; the energy is flat for w_R in ~20-120.
DEFAULT_OBJECTIVE = ObjectiveConfig(w_r=50.0, w_d=0.0)


@dataclass(frozen=True)
class PipelineConfig:
    objective: ObjectiveConfig = DEFAULT_OBJECTIVE
    optimizer: OptimizerConfig = OptimizerConfig()
    pad: int = DEFAULT_PAD
    pixel_size: float = PIXEL_SIZE_UM
    geodesic_lambda: float = GEODESIC_LAMBDA
    gradient_sigma: float = GRADIENT_SIGMA
    gradient_clip: float = GRADIENT_CLIP
    rotation_mode: str = "proper"
    samples_per_segment: int = SAMPLES_PER_SEGMENT
    constrained: bool = True
    length_um: tuple[float, float] = LENGTH_RANGE_UM
    width_um: tuple[float, float] = WIDTH_RANGE_UM
    bend_um: float = BEND_MAX_UM

    def limits(self) -> dict:
        return {"length_um": self.length_um, "width_um": self.width_um, "bend_um": self.bend_um}

    def check(self):
        """Raise ``InfeasibleError`` if the biological limits leave nothing to fit."""
        ConstraintSet.from_um(self.pixel_size, diag=1e9, width=1e9, height=1e9, **self.limits()).check()


@dataclass
class CellOutcome:
    index: int
    box: BoundingBox
    result: SegmentationResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def segment_box(image: np.ndarray, box: BoundingBox, cfg: PipelineConfig) -> SegmentationResult:
    tile = prepare_tile(image, box, cfg.pad, cfg.pixel_size, cfg.geodesic_lambda,
                        cfg.gradient_sigma, cfg.gradient_clip)
    if cfg.constrained:
        constraints = ConstraintSet.for_tile(tile, **cfg.limits())
    else:
        constraints = ConstraintSet.loose(tile)
    return segment_cell(tile, cfg.optimizer, cfg.objective, constraints,
                        rotation_mode=cfg.rotation_mode, n=cfg.samples_per_segment)


def _run_one(args) -> CellOutcome:
    index, image, box, cfg = args
    try:
        return CellOutcome(index, box, result=segment_box(image, box, cfg))
    except Exception as exc:  # one bad box must not sink the rest
        log.warning("cell %d failed: %s", index, exc)
        return CellOutcome(index, box, error=f"{type(exc).__name__}: {exc}")


def segment_image(image: np.ndarray, boxes, cfg: PipelineConfig | None = None,
                  workers: int = 1) -> list[CellOutcome]:
    """Segment each box independently; output order follows ``boxes``.

    ``boxes`` is a sequence of ``BoundingBox`` or ``(index, BoundingBox)``.
    """
    cfg = cfg or PipelineConfig()
    jobs = []
    for i, b in enumerate(boxes):
        idx, box = b if isinstance(b, tuple) else (i, b)
        jobs.append((idx, image, box, cfg))
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
