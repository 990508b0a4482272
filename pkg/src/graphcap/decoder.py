"""Two-cell caption decoder: an attention LSTM that weights visual words and a
language LSTM that emits vocabulary distributions.

At each step the attention cell consumes the previous word embedding, the
global visual vector, and the previous language hidden state.  Its hidden
state queries additive attention over the object and motion word channels;
the language cell consumes both contexts plus the attention hidden state and
maps to a softmax over the vocabulary.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .vocab import BOS, EOS, PAD


class DecoderState(NamedTuple):
    h_attn: torch.Tensor
    c_attn: torch.Tensor
    h_lang: torch.Tensor
    c_lang: torch.Tensor

    def select(self, index):
        """Gather per-hypothesis rows (beam bookkeeping)."""
        return DecoderState(*(t[index] for t in self))


def global_visual(words):
    """Global visual vector: per-channel sums of the visual words, concatenated.

    words.object/motion [..., K, Dg] -> [..., 2*Dg]
    """
    return torch.cat([words.object.sum(dim=-2), words.motion.sum(dim=-2)], dim=-1)


class AdditiveAttention(nn.Module):
    """score_k = w^T tanh(Wq q + Wk k_row); weights softmax over rows."""

    def __init__(self, query_dim, key_dim, attn_dim):
        super().__init__()
        self.query_map = nn.Linear(query_dim, attn_dim)
        self.key_map = nn.Linear(key_dim, attn_dim)
        self.score = nn.Linear(attn_dim, 1, bias=False)

    def forward(self, query, keys):
        """query [..., Dq], keys [..., K, Dk] -> (context [..., Dk], weights [..., K])"""
        scores = self.score(torch.tanh(self.query_map(query).unsqueeze(-2) + self.key_map(keys)))
        weights = torch.softmax(scores.squeeze(-1), dim=-1)
        context = (weights.unsqueeze(-1) * keys).sum(dim=-2)
        return context, weights


def attend(attention, query, keys):
    """Context vector for one query over the key rows (see AdditiveAttention)."""
    return attention(query, keys)[0]


class CaptionDecoder(nn.Module):
    def __init__(self, vocab_size, graph_dim, hidden_dim, embed_dim, attn_dim=None):
        super().__init__()
        if attn_dim is None:
            attn_dim = hidden_dim
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        # attention cell sees: previous word embedding, global visual vector, previous language hidden
        self.attn_cell = nn.LSTMCell(embed_dim + 2 * graph_dim + hidden_dim, hidden_dim)
        self.object_attention = AdditiveAttention(hidden_dim, graph_dim, attn_dim)
        self.motion_attention = AdditiveAttention(hidden_dim, graph_dim, attn_dim)
        # language cell sees: both attention contexts plus the attention hidden
        self.lang_cell = nn.LSTMCell(2 * graph_dim + hidden_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, vocab_size)

    def init_state(self, batch, like):
        zeros = like.new_zeros(batch, self.hidden_dim)
        return DecoderState(zeros, zeros.clone(), zeros.clone(), zeros.clone())

    def step(self, prev_ids, global_vec, words, state):
        """One decode step; returns log-probabilities [B, V] and the new state."""
        emb = self.embedding(prev_ids)
        h_attn, c_attn = self.attn_cell(
            torch.cat([emb, global_vec, state.h_lang], dim=-1), (state.h_attn, state.c_attn)
        )
        ctx_obj, _ = self.object_attention(h_attn, words.object)
        ctx_mot, _ = self.motion_attention(h_attn, words.motion)
        h_lang, c_lang = self.lang_cell(
            torch.cat([ctx_obj, ctx_mot, h_attn], dim=-1), (state.h_lang, state.c_lang)
        )
        log_probs = F.log_softmax(self.out(h_lang), dim=-1)
        return log_probs, DecoderState(h_attn, c_attn, h_lang, c_lang)

    def decode_step(self, prev_ids, global_vec, words, state):
        """Like :meth:`step` but returns the probability distribution."""
        log_probs, state = self.step(prev_ids, global_vec, words, state)
        return log_probs.exp(), state

    def teacher_forced(self, tokens, global_vec, words):
        """Teacher-forced pass over encoded captions.

        tokens [B, L] in caption layout (bos first, pad-terminated).  Returns
        (nll, soft, valid): ``nll`` is the mean negative log-likelihood over
        non-pad target positions; ``soft`` [B, L-1, V] holds the per-step
        distributions with every pad position replaced by a one-hot pad row;
        ``valid`` [B, L-1] marks the real target positions.
        """
        batch, length = tokens.shape
        targets = tokens[:, 1:]
        valid = targets != PAD
        if not bool(valid.any()):
            raise ValueError("captions must hold at least one non-pad target")
        steps = int(valid.sum(dim=1).max().item())

        pad_row = torch.zeros(self.vocab_size, dtype=global_vec.dtype, device=tokens.device)
        pad_row[PAD] = 1.0

        state = self.init_state(batch, global_vec)
        total = global_vec.new_zeros(())
        rows = []
        for t in range(steps):
            log_probs, state = self.step(tokens[:, t], global_vec, words, state)
            mask_t = valid[:, t]
            picked = log_probs.gather(1, targets[:, t : t + 1]).squeeze(1)
            total = total + (picked * mask_t.to(picked.dtype)).sum()
            rows.append(torch.where(mask_t.unsqueeze(1), log_probs.exp(), pad_row.expand(batch, -1)))
        for _ in range(steps, length - 1):
            rows.append(pad_row.expand(batch, -1))

        count = valid.sum()
        nll = -total / count.to(total.dtype)
        soft = torch.stack(rows, dim=1) if rows else tokens.new_zeros((batch, 0, self.vocab_size))
        return nll, soft, valid


def greedy_decode(decoder, global_vec, words, max_len):
    """Batched argmax decoding.  Returns int64 [B, max_len] in caption layout."""
    batch = global_vec.shape[0]
    device = global_vec.device
    out = torch.full((batch, max_len), PAD, dtype=torch.int64, device=device)
    out[:, 0] = BOS
    prev = out[:, 0]
    finished = torch.zeros(batch, dtype=torch.bool, device=device)
    state = decoder.init_state(batch, global_vec)
    with torch.no_grad():
        for t in range(1, max_len):
            log_probs, state = decoder.step(prev, global_vec, words, state)
            nxt = log_probs.argmax(dim=-1)
            nxt = torch.where(finished, torch.full_like(nxt, PAD), nxt)
            out[:, t] = nxt
            finished = finished | (nxt == EOS)
            if bool(finished.all()):
                break
            prev = nxt
    return out


def sequence_log_score(decoder, global_vec, words, tokens):
    """Length-normalized log-probability of one caption-layout sequence [L]."""
    tokens = tokens.view(1, -1)
    targets = tokens[0, 1:]
    state = decoder.init_state(1, global_vec.view(1, -1))
    gv = global_vec.view(1, -1)
    wd = type(words)(words.object.view(1, *words.object.shape[-2:]),
                     words.motion.view(1, *words.motion.shape[-2:]))
    total, count = 0.0, 0
    with torch.no_grad():
        for t in range(targets.shape[0]):
            target = int(targets[t])
            if target == PAD:
                break
            log_probs, state = decoder.step(tokens[:, t], gv, wd, state)
            total += float(log_probs[0, target])
            count += 1
    return total / max(count, 1)


def beam_search(decoder, global_vec, words, beam, max_len):
    """Length-normalized beam search for a single video.

    Hypotheses stop at eos or after ``max_len - 1`` generated tokens; the
    returned sequence is int64 [max_len] in caption layout.  ``beam == 1``
    reduces to greedy decoding.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    gv = global_vec.view(1, -1)
    wd = type(words)(words.object.view(1, *words.object.shape[-2:]),
                     words.motion.view(1, *words.motion.shape[-2:]))
    device = gv.device

    # each live hypothesis: (generated ids, cumulative log-prob, its own state row)
    live = [([], 0.0, decoder.init_state(1, gv))]
    done = []  # (normalized score, ids)

    with torch.no_grad():
        for _ in range(max_len - 1):
            if not live:
                break
            prev = torch.tensor(
                [ids[-1] if ids else BOS for ids, _, _ in live], dtype=torch.int64, device=device
            )
            state = DecoderState(*(torch.cat([s[i] for _, _, s in live], dim=0) for i in range(4)))
            n = len(live)
            log_probs, state = decoder.step(
                prev, gv.expand(n, -1), type(words)(wd.object.expand(n, -1, -1), wd.motion.expand(n, -1, -1)), state
            )
            top_lp, top_ids = log_probs.topk(beam, dim=-1)

            candidates = []
            for i, (ids, score, _) in enumerate(live):
                for j in range(beam):
                    candidates.append((score + float(top_lp[i, j]), i, int(top_ids[i, j])))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

            next_live = []
            for score, i, token in candidates[: beam]:
                ids = live[i][0] + [token]
                if token == EOS:
                    done.append((score / len(ids), ids))
                else:
                    row = torch.tensor([i], device=device)
                    next_live.append((ids, score, state.select(row)))
            live = next_live

    for ids, score, _ in live:  # ran out of budget without eos
        if ids:
            done.append((score / len(ids), ids))
    if not done:
        done.append((-math.inf, [EOS]))
    done.sort(key=lambda d: (-d[0], d[1]))
    best = done[0][1]

    out = torch.full((max_len,), PAD, dtype=torch.int64)
    out[0] = BOS
    out[1 : 1 + len(best)] = torch.tensor(best, dtype=torch.int64)
    return out
