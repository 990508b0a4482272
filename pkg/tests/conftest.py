import pytest
import torch

from graphcap.config import TrainConfig
from graphcap.synthetic import synth_corpus
from graphcap import training


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def trained_toy():
    """A small trained model shared by decoder/beam tests.

    40 single-object scenes, enough training to make the decoder confident;
    returns (TrainResult, videos, records).
    """
    videos, records = synth_corpus(
        40, banks=(6, 4, 2), seed=5, frames=4, regions_per_frame=2,
        feature_dim=12, max_objects=1,
    )
    cfg = TrainConfig(
        graph_dim=24, hidden_dim=24, embed_dim=8, sentence_dim=12, num_words=2,
        mlb_dim=4, batch_size=8, epochs=30, critic_iters=0, adv_weight=0.0,
        min_count=1, max_caption_len=8, val_fraction=0.0, seed=1, lr_gen=4e-3,
    )
    result = training.train(videos, records, cfg)
    return result, videos, records
