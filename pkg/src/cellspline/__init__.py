"""Model-based segmentation of rod-shaped cells from detector bounding boxes.

Each cell is a bent rod (eight parameters) whose outline is a closed cubic
B-spline; parameters are fitted per box by constrained derivative-free
minimization of an edge + region + geodesic energy.
"""

from .geometry import RodParams, rod_control_points, rod_polyline, spline_sample
from .imageops import BoundingBox, Tile, prepare_tile
from .metrics import Mask, ScoreReport, dice, score
from .objective import ObjectiveConfig, total_energy
from .optimizer import ConstraintSet, OptimizerConfig, SegmentationResult, segment_cell
from .pipeline import PipelineConfig, segment_image

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "ConstraintSet", "Mask", "ObjectiveConfig", "OptimizerConfig",
    "PipelineConfig", "RodParams", "ScoreReport", "SegmentationResult", "Tile",
    "dice", "prepare_tile", "rod_control_points", "rod_polyline", "score",
    "segment_cell", "segment_image", "spline_sample", "total_energy",
]
