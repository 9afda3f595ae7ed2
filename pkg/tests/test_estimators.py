import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from amdm.aggregate import AggregationConfig, aggregate_batch
from amdm.estimators import AMDMSampler, ComposedSampler, DiffusionSampler
from amdm.sampler import sample_batch
from amdm.schedule import build_linear_schedule
from amdm.scoremodel import Condition, MixtureModel, log_density
from amdm.validation import check_latents, check_models, check_seeds

SCH = build_linear_schedule(n_substeps=50)


def test_params_roundtrip():
    est = AMDMSampler(s=10, etas=(0.2, 0.4), overshoot="signed")
    params = est.get_params()
    assert params["s"] == 10 and params["etas"] == (0.2, 0.4)
    other = clone(est).set_params(s=5)
    assert other.s == 5 and est.s == 10


def test_not_fitted():
    with pytest.raises(NotFittedError):
        DiffusionSampler().sample(3)
    with pytest.raises(NotFittedError):
        ComposedSampler().score_samples(np.zeros((1, 2)))


def test_diffusion_sampler_matches_core():
    m = MixtureModel([[1.0, 0.0], [-1.0, 0.0]], [0.2, 0.2], [0.5, 0.5], {"a": [0]})
    est = DiffusionSampler(eta=1.0, random_state=10).fit(m, "a")
    x = est.sample(5)
    np.testing.assert_array_equal(x, sample_batch(m, SCH, Condition("a"), None, 1.0, range(10, 15)))
    np.testing.assert_array_equal(est.sample(3), x[:3])
    np.testing.assert_allclose(est.score_samples(x), log_density(m, SCH, x, 0, "a"))
    assert est.score(x) == pytest.approx(np.mean(est.score_samples(x)))
    with pytest.raises(ValueError):
        est.score_samples(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DiffusionSampler().fit([m, m])


def test_amdm_sampler_matches_core(scene):
    models, conds = scene
    est = AMDMSampler(eta_sampler=1.0, overshoot="signed").fit(models, conds)
    x, res = est.sample(4, return_stats=True)
    ref = aggregate_batch(models, conds, SCH, None, 1.0, AggregationConfig(overshoot="signed"),
                          range(4))
    np.testing.assert_array_equal(x, ref.finals)
    assert res.stat_t[0] == 1000
    assert est.n_features_in_ == 256
    with pytest.raises(ValueError):
        AMDMSampler().fit(models[:1], conds[:1])
    with pytest.raises(ValueError):
        AMDMSampler(s=60).fit(models, conds)
    with pytest.raises(ValueError):
        AMDMSampler(aggregation="cubic").fit(models, conds)


def test_composed_sampler_runs():
    a = MixtureModel.single_gaussian([1.0, 0.0])
    b = MixtureModel.single_gaussian([0.0, 1.0])
    est = ComposedSampler(langevin_steps=2, random_state=0).fit([a, b])
    x = est.sample(8)
    assert x.shape == (8, 2) and np.all(np.isfinite(est.score_samples(x)))


def test_validation_helpers():
    m = MixtureModel.single_gaussian([0.0, 0.0])
    models, conds = check_models(m)
    assert len(models) == 1 and conds[0].label is None
    with pytest.raises(TypeError):
        check_models(["not a model"])
    with pytest.raises(ValueError):
        check_models([m, m], [None])
    with pytest.raises(ValueError):
        check_latents([[np.nan, 0.0]])
    assert check_latents([[1, 2]]).dtype == np.float64
    assert check_seeds(3, 5) == [5, 6, 7]
    with pytest.raises(ValueError):
        check_seeds(0, 0)
