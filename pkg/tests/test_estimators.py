import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from feddct import FedAvgClassifier, FedDCTClassifier
from feddct.data import synth_blobs, train_test_split

FAST = dict(n_clients=4, split_factor=2, hidden_widths=(16, 16), n_rounds=3, batch_size=16)


@pytest.fixture(scope="module")
def blobs():
    train, test = train_test_split(synth_blobs(400, 3, 8, seed=0, separation=6.0), 100, seed=0)
    return train.X, train.y, test.X, test.y


@pytest.fixture(scope="module")
def fitted(blobs):
    X, y, Xt, yt = blobs
    return FedDCTClassifier(**FAST).fit(X, y, eval_set=(Xt, yt))


def test_get_params_and_clone():
    clf = FedDCTClassifier(n_clients=6, split_factor=3, lambda_cot=0.2)
    params = clf.get_params()
    assert params["n_clients"] == 6 and params["split_factor"] == 3 and params["lambda_cot"] == 0.2
    twin = clone(clf)
    assert twin.get_params() == params and twin is not clf
    assert clf.set_params(n_rounds=7).n_rounds == 7


def test_fit_predict_shapes(fitted, blobs):
    _, _, Xt, _ = blobs
    proba = fitted.predict_proba(Xt)
    assert proba.shape == (len(Xt), 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert fitted.predict(Xt).shape == (len(Xt),)
    np.testing.assert_allclose(np.exp(fitted.decision_function(Xt)), proba, rtol=1e-12)
    assert fitted.n_features_in_ == 8 and len(fitted.state_dicts()) == 2


def test_history_records_every_round(fitted):
    assert [row["round"] for row in fitted.history_] == [0, 1, 2]
    assert all(0.0 <= row["test_accuracy"] <= 1.0 for row in fitted.history_)
    assert all(row["bytes_per_client"] > 0 for row in fitted.history_)


def test_string_labels_round_trip(blobs):
    X, y, Xt, _ = blobs
    names = np.array(["ant", "bee", "cat"])
    clf = FedAvgClassifier(**FAST).fit(X, names[y])
    assert list(clf.classes_) == ["ant", "bee", "cat"]
    assert set(clf.predict(Xt)) <= set(names)


def test_fit_is_deterministic(blobs):
    X, y, Xt, _ = blobs
    a = FedDCTClassifier(**FAST, random_state=4).fit(X, y).predict_proba(Xt)
    b = FedDCTClassifier(**FAST, random_state=4).fit(X, y).predict_proba(Xt)
    assert a.tobytes() == b.tobytes()


def test_fedavg_ignores_split_factor(blobs):
    X, y, _, _ = blobs
    clf = FedAvgClassifier(**{**FAST, "split_factor": 3}).fit(X, y)
    assert len(clf.state_dicts()) == 1 and clf.history_[0]["S"] == 1


def test_unfitted_estimator_raises():
    with pytest.raises(NotFittedError):
        FedDCTClassifier().predict(np.zeros((2, 8)))


def test_feature_count_checked(fitted):
    with pytest.raises(ValueError, match="features"):
        fitted.predict(np.zeros((2, 5)))


@pytest.mark.parametrize("bad", [
    {"n_clients": 0}, {"split_factor": 1.5}, {"n_rounds": True}, {"dropout": 1.0}, {"momentum": -0.1},
    {"learning_rate": 0.0}, {"lambda_cot": -1.0}, {"partition": "skewed"}, {"architecture": "vit"},
    {"architecture": "dctnet"},
])
def test_parameter_validation(bad, blobs):
    X, y, _, _ = blobs
    with pytest.raises(ValueError):
        FedDCTClassifier(**{**FAST, **bad}).fit(X, y)


def test_indivisible_client_count_rejected(blobs):
    from feddct.orchestration import ClusteringError

    X, y, _, _ = blobs
    with pytest.raises(ClusteringError):
        FedDCTClassifier(**{**FAST, "n_clients": 5}).fit(X, y)


def test_image_shape_must_match_features(blobs):
    X, y, _, _ = blobs
    with pytest.raises(ValueError, match="image_shape"):
        FedDCTClassifier(**FAST, architecture="dctnet", image_shape=(1, 3, 3)).fit(X, y)


def test_input_validation_rejects_nan(blobs):
    X, y, _, _ = blobs
    X = X.copy()
    X[0, 0] = np.nan
    with pytest.raises(ValueError):
        FedDCTClassifier(**FAST).fit(X, y)


def test_dctnet_on_tiny_images():
    ds = synth_blobs(160, 2, 16, seed=1)
    clf = FedDCTClassifier(n_clients=2, split_factor=2, architecture="dctnet", image_shape=(1, 4, 4),
                           hidden_widths=(4, 8), n_rounds=2, batch_size=16).fit(ds.X, ds.y)
    assert clf.predict_proba(ds.X[:3]).shape == (3, 2)


def test_on_round_callback_and_trace(tmp_path, blobs):
    X, y, _, _ = blobs
    seen = []
    trace = tmp_path / "trace.jsonl"
    FedDCTClassifier(**{**FAST, "n_rounds": 2}, trace_path=str(trace)).fit(
        X, y, on_round=lambda est, row: seen.append(row["round"]))
    assert seen == [0, 1]
    assert trace.stat().st_size > 0
