"""Sklearn-style estimator facade over the captioning pipeline.

``VideoCaptioner`` exposes the usual fit/predict/score surface (plus
``get_params``/``set_params`` via ``BaseEstimator``) so the model slots into
pipelines, grid searches, and ``clone``.  Constructor parameters mirror
:class:`graphcap.config.TrainConfig` one-to-one.
"""

from __future__ import annotations

import dataclasses

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import TrainConfig
from .metrics import cider, make_pairs
from . import training
from .validation import as_caption_lists, as_feature_list

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(TrainConfig)]


class VideoCaptioner(BaseEstimator):
    """Graph-encoded attention captioner with an optional adversarial validator.

    X is a collection of :class:`graphcap.bundle.VideoFeatures`; y gives one
    caption string (or a list of them) per video.  ``predict`` returns one
    caption string per video, decoded with ``beam_width``.
    """

    def __init__(self, graph_dim=1024, hidden_dim=1024, embed_dim=300, sentence_dim=512,
                 kernel_dim=None, num_words=9, num_compare=None, mlb_dim=256,
                 adv_weight=0.01, penalty_weight=10.0, critic_iters=5, grad_clip=5.0,
                 free_running=False, batch_size=128, lr_gen=8e-4, lr_critic_start=2e-4,
                 lr_critic_end=8e-4, epochs=30, max_caption_len=26, min_count=2,
                 beam_width=5, val_fraction=0.1, seed=0, single_thread=True):
        self.graph_dim = graph_dim
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.sentence_dim = sentence_dim
        self.kernel_dim = kernel_dim
        self.num_words = num_words
        self.num_compare = num_compare
        self.mlb_dim = mlb_dim
        self.adv_weight = adv_weight
        self.penalty_weight = penalty_weight
        self.critic_iters = critic_iters
        self.grad_clip = grad_clip
        self.free_running = free_running
        self.batch_size = batch_size
        self.lr_gen = lr_gen
        self.lr_critic_start = lr_critic_start
        self.lr_critic_end = lr_critic_end
        self.epochs = epochs
        self.max_caption_len = max_caption_len
        self.min_count = min_count
        self.beam_width = beam_width
        self.val_fraction = val_fraction
        self.seed = seed
        self.single_thread = single_thread

    def _config(self):
        return TrainConfig(**{name: getattr(self, name) for name in _CONFIG_FIELDS})

    def fit(self, X, y):
        """Train on (videos, captions); returns self."""
        videos = as_feature_list(X)
        captions = as_caption_lists(y, len(videos))
        records = [(v.video_id, text) for v, texts in zip(videos, captions) for text in texts]
        result = training.train(videos, records, self._config())
        self.result_ = result
        self.vocab_ = result.vocab
        self.history_ = result.history
        return self

    def _require_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("this VideoCaptioner has not been fitted yet")

    def predict(self, X):
        """Caption strings for each video, in input order."""
        self._require_fitted()
        videos = as_feature_list(X)
        decoded = training.decode_videos(self.result_, videos, beam=self.beam_width)
        return [decoded[v.video_id] for v in videos]

    def score(self, X, y):
        """Consensus (CIDEr) score of the predictions against reference captions."""
        self._require_fitted()
        videos = as_feature_list(X)
        references = as_caption_lists(y, len(videos))
        predictions = self.predict(videos)
        candidates = {v.video_id: p for v, p in zip(videos, predictions)}
        refs = {}
        for v, texts in zip(videos, references):
            refs.setdefault(v.video_id, []).extend(texts)
        return cider(make_pairs(candidates, refs))

    def save(self, path):
        """Persist the fitted model as a checkpoint file."""
        self._require_fitted()
        result = self.result_
        return training.save_checkpoint(
            path, generator=result.generator, validator=result.validator,
            opt_generator=None, opt_validator=None, cfg=result.config,
            vocab=result.vocab, dims=result.dims, epoch=len(result.history),
            history=result.history,
        )
