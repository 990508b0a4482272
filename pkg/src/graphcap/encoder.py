"""Graph encoder: region-to-frame message passing and latent word aggregation.

Frame-level appearance and (appearance+motion fused) motion nodes absorb
information from all L = T*N region nodes through a bilinear-tanh affinity
kernel with a residual update.  The enhanced frame nodes are then condensed
into K learnable latent nodes per channel - the "visual words" the decoder
attends over.

Shape conventions: ops accept an optional leading batch dimension, i.e.
``[T, D]`` or ``[B, T, D]``; affinity matrices are row-stochastic over their
last axis.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import torch
import torch.nn as nn


class EnhancedProposals(NamedTuple):
    appearance: torch.Tensor  # [..., T, Dg]
    motion: torch.Tensor      # [..., T, Dg]


class VisualWords(NamedTuple):
    object: torch.Tensor  # [..., K, Dg]
    motion: torch.Tensor  # [..., K, Dg]


class KernelSite(nn.Module):
    """One instance of the affinity kernel: tanh-activated affine maps on both sides.

    forward(queries [..., Q, Dq], keys [..., L, Dk]) -> row-stochastic [..., Q, L]
    """

    def __init__(self, query_dim, key_dim, kernel_dim):
        super().__init__()
        self.query_map = nn.Linear(query_dim, kernel_dim)
        self.key_map = nn.Linear(key_dim, kernel_dim)

    def logits(self, queries, keys):
        q = torch.tanh(self.query_map(queries))
        k = torch.tanh(self.key_map(keys))
        return q @ k.transpose(-1, -2)

    def forward(self, queries, keys):
        return torch.softmax(self.logits(queries, keys), dim=-1)


def kernel_affinity(site, queries, keys):
    """Row-stochastic affinity between query rows and key rows at one kernel site."""
    return site(queries, keys)


def conditional_graph(frames, regions_flat, site, message_map):
    """Residual message passing from all region nodes into each frame node.

    enhanced[t] = frames[t] + sum_j affinity[t, j] * message_map(regions_flat[j])

    The sum runs over every region of the whole video, so the op is invariant
    to permutations of the region axis, and an all-zero region tensor leaves
    the frames untouched exactly (``message_map`` is bias-free).
    """
    affinity = kernel_affinity(site, frames, regions_flat)  # [..., T, L]
    return frames + affinity @ message_map(regions_flat)


def latent_aggregate(enhanced, seeds, site, aggregate_map):
    """Condense T enhanced nodes into K latent words via kernel-weighted sums.

    words[k] = sum_j affinity[k, j] * aggregate_map(enhanced[j])

    ``seeds`` may be unbatched [K, Dg]; the affinity broadcasts over any
    leading batch dimensions of ``enhanced``.
    """
    affinity = kernel_affinity(site, seeds, enhanced)  # [..., K, T]
    return affinity @ aggregate_map(enhanced)


class GraphEncoder(nn.Module):
    """Full encoding pipeline: projection, motion fusion, message passing, aggregation."""

    def __init__(self, appearance_dim, motion_dim, region_dim, graph_dim,
                 num_words, kernel_dim=None):
        super().__init__()
        if kernel_dim is None:
            kernel_dim = graph_dim
        self.graph_dim = graph_dim
        self.num_words = num_words

        self.appearance_proj = nn.Linear(appearance_dim, graph_dim)
        self.fusion_cell = nn.LSTMCell(appearance_dim + motion_dim, graph_dim)
        self.fusion_proj = nn.Linear(graph_dim, graph_dim)

        # one (psi, phi) pair per kernel site; parameters are never shared across sites
        self.site_appearance = KernelSite(graph_dim, region_dim, kernel_dim)
        self.site_motion = KernelSite(graph_dim, region_dim, kernel_dim)
        self.site_object_words = KernelSite(graph_dim, graph_dim, kernel_dim)
        self.site_motion_words = KernelSite(graph_dim, graph_dim, kernel_dim)

        self.appearance_message = nn.Linear(region_dim, graph_dim, bias=False)
        self.motion_message = nn.Linear(region_dim, graph_dim, bias=False)

        self.object_seeds = nn.Parameter(torch.randn(num_words, graph_dim) * 0.1)
        self.motion_seeds = nn.Parameter(torch.randn(num_words, graph_dim) * 0.1)
        self.object_aggregate = nn.Linear(graph_dim, graph_dim, bias=False)
        self.motion_aggregate = nn.Linear(graph_dim, graph_dim, bias=False)

        self.norm_appearance = nn.LayerNorm(graph_dim)
        self.norm_fused = nn.LayerNorm(graph_dim)
        self.norm_object_words = nn.LayerNorm(graph_dim)
        self.norm_motion_words = nn.LayerNorm(graph_dim)

    def fuse_motion(self, appearance, motion):
        """Concatenate appearance and motion per frame and run the fusion LSTM.

        Returns normalized fused-motion features with the graph feature size.
        """
        if appearance.shape[-2] != motion.shape[-2]:
            raise ValueError(
                f"frame counts differ: appearance {appearance.shape[-2]}, motion {motion.shape[-2]}"
            )
        squeeze = appearance.dim() == 2
        if squeeze:
            appearance, motion = appearance.unsqueeze(0), motion.unsqueeze(0)
        x = torch.cat([appearance, motion], dim=-1)  # [B, T, Da+Dm]
        batch = x.shape[0]
        h = x.new_zeros(batch, self.graph_dim)
        c = x.new_zeros(batch, self.graph_dim)
        outputs = []
        for t in range(x.shape[1]):
            h, c = self.fusion_cell(x[:, t], (h, c))
            outputs.append(h)
        fused = self.norm_fused(self.fusion_proj(torch.stack(outputs, dim=1)))
        return fused.squeeze(0) if squeeze else fused

    def forward(self, appearance, motion, regions):
        """Encode one video (or a batch) into enhanced proposals and visual words.

        appearance [..., T, Da], motion [..., T, Dm], regions [..., T, N, Dr]
        """
        t = appearance.shape[-2]
        if self.num_words >= t > 1:
            warnings.warn(
                f"num_words ({self.num_words}) is not small relative to the frame count ({t}); "
                "latent aggregation degenerates when K approaches T"
            )
        regions_flat = regions.reshape(*regions.shape[:-3], -1, regions.shape[-1])  # [..., L, Dr]

        frames_a = self.norm_appearance(self.appearance_proj(appearance))
        frames_m = self.fuse_motion(appearance, motion)

        enhanced_a = conditional_graph(frames_a, regions_flat, self.site_appearance, self.appearance_message)
        enhanced_m = conditional_graph(frames_m, regions_flat, self.site_motion, self.motion_message)

        words_o = self.norm_object_words(
            latent_aggregate(enhanced_a, self.object_seeds, self.site_object_words, self.object_aggregate)
        )
        words_m = self.norm_motion_words(
            latent_aggregate(enhanced_m, self.motion_seeds, self.site_motion_words, self.motion_aggregate)
        )
        return EnhancedProposals(enhanced_a, enhanced_m), VisualWords(words_o, words_m)
