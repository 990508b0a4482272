"""Generator composition: graph encoder feeding the caption decoder."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

from .decoder import CaptionDecoder, beam_search, global_visual, greedy_decode
from .encoder import GraphEncoder, VisualWords


class FeatureDims(NamedTuple):
    appearance: int
    motion: int
    region: int


def feature_dims(videos):
    """Common (Da, Dm, Dr) across a collection; raises when videos disagree."""
    dims = {v.dims for v in videos}
    if len(dims) != 1:
        raise ValueError(f"videos carry inconsistent feature dims: {sorted(dims)}")
    return FeatureDims(*dims.pop())


def features_to_tensors(videos, dtype=torch.float32, device=None):
    """Stack same-shaped videos into (appearance, motion, regions) batch tensors."""
    shapes = {(v.num_frames, v.regions_per_frame, v.dims) for v in videos}
    if len(shapes) != 1:
        raise ValueError(f"cannot stack videos with differing shapes: {sorted(shapes)}")
    stack = lambda name: torch.as_tensor(
        np.stack([getattr(v, name) for v in videos]), dtype=dtype, device=device
    )
    return stack("appearance"), stack("motion"), stack("regions")


class CaptionGenerator(nn.Module):
    """Encoder + decoder with the shared decode entry points."""

    def __init__(self, dims, vocab_size, graph_dim, hidden_dim, embed_dim,
                 num_words, kernel_dim=None):
        super().__init__()
        self.encoder = GraphEncoder(
            appearance_dim=dims[0], motion_dim=dims[1], region_dim=dims[2],
            graph_dim=graph_dim, num_words=num_words, kernel_dim=kernel_dim,
        )
        self.decoder = CaptionDecoder(
            vocab_size=vocab_size, graph_dim=graph_dim,
            hidden_dim=hidden_dim, embed_dim=embed_dim,
        )

    def encode(self, appearance, motion, regions):
        """Returns (visual words, global visual vector) for a batch."""
        _, words = self.encoder(appearance, motion, regions)
        return words, global_visual(words)

    def teacher_forced_nll(self, appearance, motion, regions, tokens):
        """Caption NLL plus the per-step soft caption for the validator.

        Returns (nll, soft rows, valid mask, visual words).
        """
        words, gv = self.encode(appearance, motion, regions)
        nll, soft, valid = self.decoder.teacher_forced(tokens, gv, words)
        return nll, soft, valid, words

    def greedy(self, appearance, motion, regions, max_len):
        with torch.no_grad():
            words, gv = self.encode(appearance, motion, regions)
        return greedy_decode(self.decoder, gv, words, max_len)

    def beam(self, appearance, motion, regions, beam, max_len):
        """Beam-decode a single video; accepts [T, ...] or [1, T, ...] inputs."""
        if appearance.dim() == 2:
            appearance, motion, regions = (x.unsqueeze(0) for x in (appearance, motion, regions))
        with torch.no_grad():
            words, gv = self.encode(appearance, motion, regions)
        single = VisualWords(words.object[0], words.motion[0])
        return beam_search(self.decoder, gv[0], single, beam, max_len)


def build_generator(cfg, dims, vocab_size):
    return CaptionGenerator(
        dims=dims, vocab_size=vocab_size, graph_dim=cfg.graph_dim,
        hidden_dim=cfg.hidden_dim, embed_dim=cfg.embed_dim,
        num_words=cfg.num_words, kernel_dim=cfg.kernel_dim,
    )
