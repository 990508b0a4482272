import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from graphcap.config import TrainConfig
from graphcap.estimator import VideoCaptioner
from graphcap import training
from helpers import tiny_corpus


def _toy_estimator(**overrides):
    params = dict(
        graph_dim=16, hidden_dim=16, embed_dim=8, sentence_dim=12, num_words=2,
        mlb_dim=4, batch_size=8, epochs=8, critic_iters=1, adv_weight=0.01,
        min_count=1, max_caption_len=10, val_fraction=0.0, seed=0, lr_gen=4e-3,
        beam_width=2,
    )
    params.update(overrides)
    return VideoCaptioner(**params)


def _xy(num_scenes=16, seed=3):
    videos, records = tiny_corpus(num_scenes, seed=seed)
    by_id = {}
    for vid, text in records:
        by_id.setdefault(vid, []).append(text)
    return videos, [by_id[v.video_id] for v in videos]


def test_default_params_mirror_train_config():
    est = VideoCaptioner()
    assert set(est.get_params()) == set(TrainConfig().to_dict())
    assert est._config() == TrainConfig()


def test_sklearn_plumbing():
    est = _toy_estimator()
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()
    est.set_params(num_words=3)
    assert est.num_words == 3


def test_unfitted_predict_raises():
    with pytest.raises(NotFittedError):
        _toy_estimator().predict([])


def test_fit_predict_score():
    videos, y = _xy()
    est = _toy_estimator().fit(videos, y)
    predictions = est.predict(videos)
    assert len(predictions) == len(videos)
    assert all(isinstance(p, str) for p in predictions)
    score = est.score(videos, y)
    assert isinstance(score, float) and 0.0 <= score <= 10.0
    assert est.history_ and "loss_caption" in est.history_[0]


def test_fit_accepts_single_caption_strings():
    videos, y = _xy(8)
    est = _toy_estimator(epochs=1).fit(videos, [caps[0] for caps in y])
    assert len(est.predict(videos[:2])) == 2


def test_input_validation():
    videos, y = _xy(4)
    est = _toy_estimator(epochs=1)
    with pytest.raises(ValueError, match="caption entries"):
        est.fit(videos, y[:-1])
    with pytest.raises(ValueError, match="VideoFeatures"):
        est.fit([object()], ["a"])
    with pytest.raises(ValueError, match="holds no captions"):
        est.fit(videos, [[] for _ in videos])


def test_save_roundtrips_through_checkpoint(tmp_path):
    videos, y = _xy(8)
    est = _toy_estimator(epochs=2).fit(videos, y)
    path = est.save(tmp_path / "model.pt")
    decoded = training.decode_videos(path, videos[:4], beam=est.beam_width)
    assert [decoded[v.video_id] for v in videos[:4]] == est.predict(videos[:4])
