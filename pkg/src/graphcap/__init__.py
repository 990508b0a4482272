"""Graph-based video captioning with latent visual words and an adversarial validator.

The package turns pre-extracted video features (frame appearance, clip motion,
region proposals) into captions.  Region features are fused into frame-level
nodes through a conditional graph operation, condensed into a small set of
latent "visual words" per channel, and decoded by a two-cell attention LSTM.
An optional critic reconstructs visual words from captions and scores them
against the video's own words (WGAN-GP training).

Entry points:
  * :class:`graphcap.estimator.VideoCaptioner` - sklearn-style fit/predict.
  * :mod:`graphcap.cli` - ``graphcap synth|train|generate|evaluate``.
"""

from .bundle import BundleError, VideoFeatures, load_bundle, load_captions, save_bundle, save_captions
from .vocab import Vocabulary, build_vocabulary, encode_caption, normalize_text
from .synthetic import SceneSpec, synth_corpus
from .config import ConfigError, TrainConfig
from .estimator import VideoCaptioner

__all__ = [
    "BundleError",
    "ConfigError",
    "SceneSpec",
    "TrainConfig",
    "VideoCaptioner",
    "VideoFeatures",
    "Vocabulary",
    "build_vocabulary",
    "encode_caption",
    "load_bundle",
    "load_captions",
    "normalize_text",
    "save_bundle",
    "save_captions",
    "synth_corpus",
]

__version__ = "0.1.0"
