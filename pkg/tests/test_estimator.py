import numpy as np
import pytest
from sklearn.base import clone

from mreg._validation import check_bags, check_grades
from mreg.estimator import MRegEstimator

SMALL = dict(dim=16, learning_rate=1e-3)


def test_get_params_and_clone():
    est = MRegEstimator(epochs=3, use_amp=False, **SMALL)
    params = est.get_params()
    assert params["epochs"] == 3 and params["use_amp"] is False and params["beta"] == 2.0
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(epochs=5)
    assert est.epochs == 5


def test_fit_predict(tiny_data):
    X, y = tiny_data
    est = MRegEstimator(epochs=2, **SMALL).fit(X, y)
    pred = est.predict(X)
    assert pred.shape == (6,) and set(pred) <= {0, 1, 2}
    assert est.config_.frame_hw == (16, 16)
    assert len(est.history_) == 12
    r = est.predict_regression(X)
    assert np.array_equal(pred, np.digitize(r, [0.5, 1.5]))
    p = est.predict_mr_proba(X)
    assert ((p >= 0) & (p <= 1)).all()
    alphas = est.select_instances(X)
    assert ((alphas >= 0) & (alphas < 3)).all()
    assert 0 <= est.score(X, y) <= 1


def test_single_bag_is_promoted(tiny_data):
    X, y = tiny_data
    est = MRegEstimator(epochs=0, **SMALL).fit(X, y)
    assert est.predict(X[0]).shape == (1,)


def test_from_checkpoint_reproduces_predictions(tiny_data):
    X, y = tiny_data
    est = MRegEstimator(epochs=1, **SMALL).fit(X, y)
    back = MRegEstimator.from_checkpoint(est.checkpoint_)
    assert np.array_equal(back.predict_regression(X), est.predict_regression(X))
    assert back.get_params()["dim"] == 16


def test_predict_before_fit(tiny_data):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        MRegEstimator().predict(tiny_data[0])


def test_validation_errors(tiny_data):
    X, y = tiny_data
    with pytest.raises(ValueError, match="shape"):
        check_bags(np.zeros((2, 3, 16, 16)))
    with pytest.raises(ValueError, match=r"\[0, 255\]"):
        check_bags(np.full((1, 3, 4, 3, 8, 8), 300.0))
    with pytest.raises(ValueError, match="instances"):
        check_bags(X, n_instances=4)
    with pytest.raises(ValueError, match="frame size"):
        check_bags(X, frame_hw=(48, 48))
    with pytest.raises(ValueError, match="labels"):
        check_grades([0, 1], 3)
    with pytest.raises(ValueError, match="grades"):
        check_grades([0, 3], 2)
    est = MRegEstimator(epochs=0, **SMALL).fit(X, y)
    with pytest.raises(ValueError, match="clip length"):
        est.predict(X[:, :, :8])


def test_float_input_is_cast():
    X = check_bags(np.full((1, 3, 4, 3, 8, 8), 12.0))
    assert X.dtype == np.uint8 and X[0, 0, 0, 0, 0, 0] == 12
