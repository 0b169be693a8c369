import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from helpers import toy_model
from multispat import inference
from multispat.estimator import LatentGaussianModel


@pytest.fixture(scope="module")
def toy():
    model = toy_model()
    return model.stack, list(model.effects)


def test_params_round_trip(toy):
    _, effects = toy
    est = LatentGaussianModel(effects=effects, families=["poisson", "poisson"], threads=2)
    params = est.get_params()
    assert params["threads"] == 2 and params["families"] == ["poisson", "poisson"]
    twin = clone(est)
    assert [e.name for e in twin.get_params()["effects"]] == [e.name for e in effects]
    assert not hasattr(twin, "result_")
    est.set_params(z_scores=(-1.0, 0.0, 1.0))
    assert est.z_scores == (-1.0, 0.0, 1.0)


def test_fit_matches_functional_api(toy):
    stack, effects = toy
    est = LatentGaussianModel(effects=effects, families=["poisson", "poisson"]).fit(stack)
    ref = inference.fit(toy_model())
    np.testing.assert_array_equal(est.result_.latent_mean, ref.latent_mean)
    mean, sd = est.predict("first", return_std=True)
    np.testing.assert_array_equal(mean, ref.predict_rows("first")[0])
    np.testing.assert_array_equal(est.predict("second"), ref.predict_rows("second")[0])
    assert est.n_latent_ == 10
    assert est.hyper_names_ == ["u.precision", "v.precision"]
    assert set(est.hyper_summaries_) == set(est.hyper_names_)
    assert est.score() == ref.log_marginal_likelihood
    assert len(est.effect("u")[0]) == 4


def test_unfitted(toy):
    with pytest.raises(NotFittedError):
        LatentGaussianModel().predict("first")


@pytest.mark.parametrize("kw", [dict(threads=0), dict(variance_method="x"), dict(z_scores=())])
def test_invalid_params(toy, kw):
    stack, effects = toy
    with pytest.raises(ValueError):
        LatentGaussianModel(effects=effects, families=["poisson", "poisson"], **kw).fit(stack)


def test_rejects_arrays():
    with pytest.raises(TypeError):
        LatentGaussianModel().fit(np.zeros((3, 2)))
