import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lvsciml.estimators import NeuralODERegressor, UDERegressor
from lvsciml.models import RolloutConfig, rollout


def small_ude(**kw):
    return UDERegressor(hidden=(5,), adam_iters=40, rmsprop_iters=10, horizons=2, **kw)


def test_params_and_clone():
    est = small_ude(random_state=3)
    assert est.get_params()["random_state"] == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    est.set_params(lr=0.05)
    assert est.lr == 0.05
    assert "hidden" in NeuralODERegressor().get_params()


def test_fit_predict_matches_rollout(truth):
    est = small_ude().fit(truth.times, truth.states)
    assert est.n_features_in_ == 1 and est.trace_.final_loss < est.trace_.initial_loss
    pred = est.predict(truth.times.reshape(-1, 1))
    ref = rollout(est.model_, est.params_, truth.states[0], RolloutConfig(truth.times, 4))
    np.testing.assert_allclose(pred, ref.states, rtol=1e-12)


def test_predict_any_order_and_beyond(truth):
    est = small_ude().fit(truth.times, truth.states)
    t = np.array([15.0, 0.0, 3.3, 3.3, 10.0])
    pred = est.predict(t)
    assert pred.shape == (5, 2)
    np.testing.assert_array_equal(pred[1], truth.states[0])
    np.testing.assert_array_equal(pred[2], pred[3])
    again = est.predict([10.0, 15.0])
    np.testing.assert_allclose(again, pred[[4, 0]], rtol=1e-9)


def test_fit_deterministic(truth):
    a = small_ude().fit(truth.times, truth.states)
    b = small_ude().fit(truth.times, truth.states)
    assert np.array_equal(a.params_, b.params_)


def test_neural_ode_and_score(truth):
    est = NeuralODERegressor(hidden=(8, 8), adam_iters=30, lbfgs_iters=5, lr=1e-2)
    est.fit(truth.times, truth.states)
    assert np.isfinite(est.score(truth.times, truth.states))


def test_interaction_shape(truth):
    est = small_ude().fit(truth.times, truth.states)
    out = est.interaction([[1.0, 1.0], [2.0, 0.5]])
    assert out.shape == (2, 2)


def test_validation(truth):
    with pytest.raises(NotFittedError):
        small_ude().predict([1.0])
    est = small_ude()
    with pytest.raises(ValueError):
        est.fit(truth.times, truth.states[:, :1])
    with pytest.raises(ValueError):
        est.fit(truth.times[::-1], truth.states)
    with pytest.raises(ValueError):
        est.fit(truth.times[:50], truth.states)
    with pytest.raises(ValueError):
        est.fit(np.column_stack([truth.times, truth.times]), truth.states)
    est.fit(truth.times, truth.states)
    with pytest.raises(ValueError):
        est.predict([-1.0])
