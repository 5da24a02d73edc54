"""Random search over the objective weights ``(w_R, w_D)``, scored by AMD."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import InvalidInputError, average_multiobject_dice
from .objective import ObjectiveConfig
from .optimizer import OptimizerConfig
from .pipeline import PipelineConfig, segment_image
from .synthgen import ColonyScene

RANGE_MAX = 500.0
TRIALS = 1000


@dataclass(frozen=True)
class TuneConfig:
    range_max: float = RANGE_MAX
    trials: int = TRIALS
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.range_max > 0:
            raise ValueError("range_max must be positive")


@dataclass(frozen=True)
class Trial:
    index: int
    w_r: float
    w_d: float
    amd: float


@dataclass
class TuneResult:
    w_r: float
    w_d: float
    best_amd: float
    trials: list[Trial] = field(default_factory=list)


def sample_weights(cfg: TuneConfig) -> np.ndarray:
    """``(trials, 2)`` uniform draws; a longer run shares the shorter run's prefix."""
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(0.0, cfg.range_max, size=(cfg.trials, 2))


def scene_amd(scene: ColonyScene, pipeline: PipelineConfig, workers: int = 1) -> float:
    """AMD of the pipeline run from the scene's GT boxes; failed cells score 0."""
    outcomes = segment_image(scene.image, scene.boxes, pipeline, workers)
    dices = []
    for o, gt in zip(outcomes, scene.masks):
        dices.append(average_multiobject_dice([o.result.mask], [gt]) if o.ok else 0.0)
    return float(np.mean(dices))


def tune_weights(scene: ColonyScene, cfg: TuneConfig | None = None,
                 opt_cfg: OptimizerConfig | None = None, pipeline: PipelineConfig | None = None,
                 workers: int = 1) -> TuneResult:
    """Pick the ``(w_R, w_D)`` with the highest AMD among ``cfg.trials`` random draws.

    Ties go to the lower ``w_R``, then the lower ``w_D``.
    """
    if not scene.cells:
        raise InvalidInputError("tuning scene has no cells")
    cfg = cfg or TuneConfig()
    pipeline = pipeline or PipelineConfig()
    if opt_cfg is not None:
        pipeline = replace(pipeline, optimizer=opt_cfg)
    base = pipeline.objective
    log = []
    for i, (w_r, w_d) in enumerate(sample_weights(cfg)):
        obj = ObjectiveConfig(epsilon=base.epsilon, k=base.k, w_r=float(w_r), w_d=float(w_d))
        amd = scene_amd(scene, replace(pipeline, objective=obj), workers)
        log.append(Trial(i, float(w_r), float(w_d), amd))
    best = min(log, key=lambda t: (-t.amd, t.w_r, t.w_d))
    return TuneResult(best.w_r, best.w_d, best.amd, log)
