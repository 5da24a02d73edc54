import numpy as np
import pytest

from cellspline.metrics import InvalidInputError
from cellspline.objective import ObjectiveConfig
from cellspline.optimizer import OptimizerConfig
from cellspline.pipeline import PipelineConfig
from cellspline.synthgen import ColonyScene, render_scene
from cellspline.tuning import TuneConfig, sample_weights, scene_amd, tune_weights

FAST = OptimizerConfig(rounds=2, evals_per_stage=30)


@pytest.fixture(scope="module")
def scene():
    return render_scene(3, 96, 96, seed=21)


def test_single_trial_returns_that_pair(scene):
    cfg = TuneConfig(trials=1, seed=4)
    res = tune_weights(scene, cfg, FAST)
    assert (res.w_r, res.w_d) == tuple(sample_weights(cfg)[0])
    assert len(res.trials) == 1


def test_weights_in_range_and_log(scene):
    res = tune_weights(scene, TuneConfig(trials=4, seed=1), FAST)
    assert len(res.trials) == 4
    for t in res.trials:
        assert 0 <= t.w_r <= 500 and 0 <= t.w_d <= 500
    assert res.best_amd == max(t.amd for t in res.trials)
    assert 0 <= res.w_r <= 500 and 0 <= res.w_d <= 500


def test_shared_prefix_is_monotone(scene):
    short = tune_weights(scene, TuneConfig(trials=2, seed=9), FAST)
    long = tune_weights(scene, TuneConfig(trials=4, seed=9), FAST)
    assert [t.amd for t in long.trials[:2]] == [t.amd for t in short.trials]
    assert long.best_amd >= short.best_amd


def test_deterministic(scene):
    a = tune_weights(scene, TuneConfig(trials=2, seed=3), FAST)
    b = tune_weights(scene, TuneConfig(trials=2, seed=3), FAST)
    assert a == b


def test_best_at_least_default_point(scene):
    res = tune_weights(scene, TuneConfig(trials=3, seed=0), FAST)
    pipe = PipelineConfig(optimizer=FAST, objective=ObjectiveConfig(w_r=0, w_d=0))
    zero = scene_amd(scene, pipe)
    assert res.best_amd >= zero


def test_ties_prefer_lower_weights(scene, monkeypatch):
    import cellspline.tuning as tuning

    monkeypatch.setattr(tuning, "scene_amd", lambda *a, **k: 0.5)
    res = tuning.tune_weights(scene, TuneConfig(trials=6, seed=2), FAST)
    draws = sample_weights(TuneConfig(trials=6, seed=2))
    best = min(map(tuple, draws))
    assert (res.w_r, res.w_d) == best


def test_empty_scene():
    empty = ColonyScene(np.zeros((10, 10)), [], 0.8, 0.45, 0.25, 0.0, 0)
    with pytest.raises(InvalidInputError):
        tune_weights(empty, TuneConfig(trials=1))


def test_config_validation():
    with pytest.raises(ValueError):
        TuneConfig(trials=0)
    with pytest.raises(ValueError):
        TuneConfig(range_max=0)
