"""Adversarial caption validator (WGAN-GP critic).

The critic embeds a caption (one-hot rows for real captions, probability rows
for generated ones), runs a residual 1-D convolution stack, reconstructs
object and motion visual words from the sentence features with the same
kernel construction the encoder uses, and scores each reconstructed word
against the video's own word via bias-free low-rank bilinear pooling.  The
two channel scores are mixed by a sentence-dependent weight.  All bilinear
parameters are bias-free so an all-zero parameter set scores exactly 0.5.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .encoder import KernelSite, latent_aggregate


class SentenceFeatures(NamedTuple):
    features: torch.Tensor  # [B, T', Ds]
    pooled: torch.Tensor    # [B, Ds] mean over valid positions


def check_caption_rows(rows, tol=1e-3):
    """Require every row to be (numerically) a probability distribution."""
    if rows.shape[-1] < 1:
        raise ValueError("caption rows need at least one vocabulary column")
    sums = rows.sum(dim=-1)
    if not torch.all((sums - 1.0).abs() <= tol):
        raise ValueError("caption rows must each sum to 1")
    if not torch.all(rows >= -tol):
        raise ValueError("caption rows must be nonnegative")


class MlbScore(nn.Module):
    """Low-rank bilinear comparator: sigmoid(w^T (tanh(U^T a) * tanh(V^T b))).

    U, V and the scalar head are all bias-free, which pins the score of any
    zero input (either side) at exactly 0.5.
    """

    def __init__(self, feature_dim, mlb_dim):
        super().__init__()
        self.left = nn.Linear(feature_dim, mlb_dim, bias=False)
        self.right = nn.Linear(feature_dim, mlb_dim, bias=False)
        self.head = nn.Linear(mlb_dim, 1, bias=False)

    def forward(self, reconstructed, words):
        """reconstructed [..., Dg], words [..., Dg] -> scores [...] in (0, 1)"""
        joint = torch.tanh(self.left(reconstructed)) * torch.tanh(self.right(words))
        return torch.sigmoid(self.head(joint).squeeze(-1))


def mlb_score(mlb, reconstructed, words):
    return mlb(reconstructed, words)


def channel_score(mlb, reconstructed, words, num_compare):
    """Mean pairwise score over the first ``num_compare`` index-aligned word pairs."""
    k = reconstructed.shape[-2]
    if not 1 <= num_compare <= k:
        raise ValueError(f"num_compare must be in [1, {k}], got {num_compare}")
    pair_scores = mlb(reconstructed[..., :num_compare, :], words[..., :num_compare, :])
    return pair_scores.mean(dim=-1)


def reconstruct_words(words, sentence, site, recon_map):
    """Rebuild visual words from sentence features (kernel-weighted sums over positions)."""
    return latent_aggregate(sentence, words, site, recon_map)


class CaptionValidator(nn.Module):
    def __init__(self, vocab_size, sentence_dim, graph_dim, mlb_dim,
                 kernel_dim=None, conv_blocks=3, kernel_width=3):
        super().__init__()
        if kernel_dim is None:
            kernel_dim = graph_dim
        self.sentence_dim = sentence_dim
        # generalized embedding lookup: a one-hot row selects its embedding,
        # a probability row yields the expected embedding
        self.word_proj = nn.Linear(vocab_size, sentence_dim, bias=False)
        self.convs = nn.ModuleList(
            nn.Conv1d(sentence_dim, sentence_dim, kernel_width, padding=kernel_width // 2)
            for _ in range(conv_blocks)
        )
        self.site_object = KernelSite(graph_dim, sentence_dim, kernel_dim)
        self.site_motion = KernelSite(graph_dim, sentence_dim, kernel_dim)
        self.object_recon = nn.Linear(sentence_dim, graph_dim, bias=False)
        self.motion_recon = nn.Linear(sentence_dim, graph_dim, bias=False)
        self.mlb = MlbScore(graph_dim, mlb_dim)
        self.object_gate = nn.Parameter(torch.zeros(sentence_dim))
        self.motion_gate = nn.Parameter(torch.zeros(sentence_dim))

    def sentence_features(self, rows, valid=None, check_input=True):
        """Caption rows [B, T', V] (or [T', V]) -> residual-conv sentence features.

        ``valid`` marks the positions included in the mean-pooled summary;
        padding rows still pass through the convolutions.
        """
        squeeze = rows.dim() == 2
        if squeeze:
            rows = rows.unsqueeze(0)
            if valid is not None:
                valid = valid.unsqueeze(0)
        if check_input:
            check_caption_rows(rows)

        x = self.word_proj(rows)             # [B, T', Ds]
        x = x.transpose(1, 2)                # [B, Ds, T']
        for conv in self.convs:
            x = x + torch.tanh(conv(x))
        features = x.transpose(1, 2)         # [B, T', Ds]

        if valid is None:
            pooled = features.mean(dim=1)
        else:
            counts = valid.sum(dim=1)
            if bool((counts < 1).any()):
                raise ValueError("each caption needs at least one valid position for pooling")
            weights = valid.to(features.dtype).unsqueeze(-1)
            pooled = (features * weights).sum(dim=1) / counts.unsqueeze(-1).to(features.dtype)

        if squeeze:
            return SentenceFeatures(features.squeeze(0), pooled.squeeze(0))
        return SentenceFeatures(features, pooled)

    def adaptive_weight(self, pooled):
        """Object-channel mixing weight in (0, 1), from the pooled sentence feature.

        Computed as a two-way softmax over the two gate logits, i.e. a sigmoid
        of their difference, which is numerically stable and shift-invariant.
        """
        diff = (pooled * (self.object_gate - self.motion_gate)).sum(dim=-1)
        return torch.sigmoid(diff)

    def forward(self, rows, words_object, words_motion, valid=None, num_compare=None, check_input=True):
        """Critic value D(caption | words) in (0, 1); [B] for batched input.

        The visual words are the conditioning side and must already be
        detached by the caller when gradients should not reach the encoder.
        """
        squeeze = rows.dim() == 2
        if squeeze:
            rows = rows.unsqueeze(0)
            words_object = words_object.unsqueeze(0)
            words_motion = words_motion.unsqueeze(0)
            if valid is not None:
                valid = valid.unsqueeze(0)
        if num_compare is None:
            num_compare = words_object.shape[-2]

        sent = self.sentence_features(rows, valid, check_input=check_input)
        recon_o = reconstruct_words(words_object, sent.features, self.site_object, self.object_recon)
        recon_m = reconstruct_words(words_motion, sent.features, self.site_motion, self.motion_recon)
        score_o = channel_score(self.mlb, recon_o, words_object, num_compare)
        score_m = channel_score(self.mlb, recon_m, words_motion, num_compare)
        weight = self.adaptive_weight(sent.pooled)
        value = weight * score_o + (1.0 - weight) * score_m
        return value.squeeze(0) if squeeze else value

    discriminate = forward


def gradient_penalty(critic, real_rows, gen_rows, penalty_weight, eps=None, rng=None):
    """WGAN-GP regularizer on caption inputs.

    Interpolates once per sample between real and generated caption rows,
    takes the critic's gradient with respect to the whole interpolated input,
    and penalizes the per-sample gradient 2-norm's distance from 1.  Returns
    the batch mean, differentiable through the critic parameters.
    """
    if real_rows.shape != gen_rows.shape:
        raise ValueError(f"shape mismatch: real {tuple(real_rows.shape)} vs generated {tuple(gen_rows.shape)}")
    squeeze = real_rows.dim() == 2
    if squeeze:
        real_rows, gen_rows = real_rows.unsqueeze(0), gen_rows.unsqueeze(0)

    batch = real_rows.shape[0]
    if eps is None:
        eps = torch.rand(batch, 1, 1, dtype=real_rows.dtype, device=real_rows.device, generator=rng)
    else:
        eps = torch.as_tensor(eps, dtype=real_rows.dtype, device=real_rows.device).reshape(-1, 1, 1)

    interp = (eps * real_rows + (1.0 - eps) * gen_rows.detach()).detach().requires_grad_(True)
    values = critic(interp)
    grads = torch.autograd.grad(values.sum(), interp, create_graph=True)[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return penalty_weight * ((norms - 1.0) ** 2).mean()
