import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gated_streams import GatedStreamClassifier
from gated_streams.data import GeneratorSpec, generate_video

SPEC = GeneratorSpec(num_classes=4, H=8, W=8, s=2, units_per_video=2)
SMALL = dict(patch_size=4, embed_dim=8, num_heads=2, depth=1, n_st=2, n_lt=2, sampling_period=2,
             epochs=1, windows_per_epoch=16, eval_batch_size=128)


@pytest.fixture(scope="module")
def videos():
    vs = [generate_video(SPEC, seed) for seed in range(3)]
    return [v.frames for v in vs], [v.labels * 10 for v in vs]  # non-contiguous label ids


def test_get_params_and_clone():
    est = GatedStreamClassifier(**SMALL)
    params = est.get_params()
    assert params["embed_dim"] == 8 and params["gating_mode"] == "Feature"
    assert clone(est).get_params() == params
    est.set_params(gating_mode="NoGating")
    assert est.gating_mode == "NoGating"


def test_fit_predict_round_trip(videos):
    X, y = videos
    est = GatedStreamClassifier(**SMALL).fit(X, y)
    assert set(est.classes_.tolist()) <= {0, 10, 20, 30}
    preds = est.predict(X[:2])
    assert [p.shape for p in preds] == [x.shape[:1] for x in X[:2]]
    assert set(np.concatenate(preds).tolist()) <= set(est.classes_.tolist())
    probs = est.predict_proba(X[:1])[0]
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert 0.0 <= est.score(X, y) <= 1.0
    assert est.n_features_in_ == 8 * 8 * 3 and len(est.history_) == 1


def test_fit_is_reproducible(videos):
    X, y = videos
    a = GatedStreamClassifier(**SMALL, random_state=3).fit(X, y).predict_proba(X[:1])[0]
    b = GatedStreamClassifier(**SMALL, random_state=3).fit(X, y).predict_proba(X[:1])[0]
    assert a.tobytes() == b.tobytes()


def test_not_fitted():
    with pytest.raises(NotFittedError):
        GatedStreamClassifier().predict([np.zeros((3, 8, 8, 3))])


@pytest.mark.parametrize("X, y, match", [
    ([np.zeros((3, 8, 8))], [np.zeros(3)], r"\[T, H, W, C\]"),
    ([np.full((3, 8, 8, 3), 2.0)], [np.zeros(3)], r"\[0, 1\]"),
    ([np.zeros((3, 8, 8, 3))], [np.zeros(2)], "labels"),
    ([np.zeros((3, 8, 8, 3)), np.zeros((3, 4, 4, 3))], [np.zeros(3), np.zeros(3)], "shape"),
])
def test_input_validation(X, y, match):
    with pytest.raises(ValueError, match=match):
        GatedStreamClassifier(**SMALL).fit(X, y)


def test_single_class_rejected():
    with pytest.raises(ValueError, match="two distinct"):
        GatedStreamClassifier(**SMALL).fit([np.zeros((4, 8, 8, 3))], [np.zeros(4, int)])


def test_frame_shape_checked_at_predict(videos):
    X, y = videos
    est = GatedStreamClassifier(**SMALL).fit(X, y)
    with pytest.raises(ValueError, match="fit on"):
        est.predict([np.zeros((3, 16, 16, 3))])
