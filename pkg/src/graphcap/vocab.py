"""Caption normalization, vocabulary construction, and token encoding.

Captions are lowercased, stripped of ASCII punctuation, and whitespace-split.
Token ids 0-3 are reserved for the pad/bos/eos/unk specials; every other token
gets a contiguous id.  Encoded captions are ``[bos, w1, ..., eos]`` truncated
to a fixed length and right-padded with the pad id.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_text(raw):
    """Lowercase, delete ASCII punctuation, split on whitespace."""
    return raw.lower().translate(_PUNCT_TABLE).split()


@dataclass
class Vocabulary:
    token_to_id: dict = field(default_factory=dict)
    id_to_token: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.token_to_id:
            for i, tok in enumerate(SPECIAL_TOKENS):
                self.token_to_id[tok] = i
            self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self):
        return len(self.token_to_id)

    def __contains__(self, token):
        return token in self.token_to_id

    def id_of(self, token):
        return self.token_to_id.get(token, UNK)

    def token_of(self, token_id):
        return self.id_to_token[int(token_id)]

    @property
    def tokens(self):
        """All tokens in id order (specials first)."""
        return [self.id_to_token[i] for i in range(len(self))]

    @classmethod
    def from_tokens(cls, tokens):
        """Rebuild a vocabulary from its id-ordered token list (checkpoint restore)."""
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("token list must start with the four special tokens")
        token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(token_to_id) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary list")
        return cls(token_to_id=token_to_id, id_to_token=dict(enumerate(tokens)))


def build_vocabulary(captions, min_count=1):
    """Build a vocabulary from raw caption strings.

    Tokens appearing fewer than ``min_count`` times are left out (they encode
    to the unk id).  Non-special tokens get ids in sorted order so the mapping
    is deterministic for a given corpus.  An empty corpus yields a vocabulary
    of the four specials only.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    for raw in captions:
        counts.update(normalize_text(raw))
    vocab = Vocabulary()
    next_id = len(SPECIAL_TOKENS)
    for token in sorted(counts):
        if counts[token] >= min_count and token not in vocab.token_to_id:
            vocab.token_to_id[token] = next_id
            vocab.id_to_token[next_id] = token
            next_id += 1
    return vocab


def encode_caption(raw, vocab, max_len=26):
    """Encode a raw caption string to a fixed-length id array.

    The result is ``[bos, tokens..., eos]`` with out-of-vocabulary tokens
    mapped to unk, truncated to ``max_len`` ids total (the bos/eos markers
    count toward the limit, so a truncated caption may lose its eos), then
    right-padded with the pad id.
    """
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    ids = [BOS] + [vocab.id_of(tok) for tok in normalize_text(raw)] + [EOS]
    ids = ids[:max_len]
    ids.extend([PAD] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def decode_tokens(ids, vocab):
    """Invert :func:`encode_caption`: drop bos/pad, stop at eos, return words."""
    words = []
    for token_id in np.asarray(ids).ravel():
        token_id = int(token_id)
        if token_id == BOS:
            continue
        if token_id in (EOS, PAD):
            break
        words.append(vocab.token_of(token_id))
    return words


@dataclass
class Caption:
    """An encoded caption tied to its video."""

    video_id: str
    tokens: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1:
            raise ValueError(f"{self.video_id}: caption tokens must be 1-D")

    def text(self, vocab):
        return " ".join(decode_tokens(self.tokens, vocab))
