"""Validated training configuration.

Defaults follow the reference operating point: 1024-wide graph features and
LSTM hidden states, 300-dim word embeddings, 512-dim sentence features in the
validator, batch 128, beam 5, captions capped at 26 ids, generator learning
rate 8e-4, and a critic learning rate ramping 2e-4 -> 8e-4.  Everything is
overridable; desk-scale runs shrink the widths.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    """Raised when a configuration value is out of contract."""


@dataclass
class TrainConfig:
    # model widths
    graph_dim: int = 1024          # node feature size in the graph operations
    hidden_dim: int = 1024         # LSTM hidden size (both decoder cells)
    embed_dim: int = 300           # word embedding size
    sentence_dim: int = 512        # validator CNN feature size
    kernel_dim: int | None = None  # affinity kernel space; defaults to graph_dim
    num_words: int = 9             # latent visual words per channel (K)
    num_compare: int | None = None  # word pairs scored by the validator; defaults to num_words
    mlb_dim: int = 256             # low-rank bilinear pooling size

    # objective
    adv_weight: float = 0.01       # weight of the adversarial term in the generator loss
    penalty_weight: float = 10.0   # gradient-penalty coefficient
    critic_iters: int = 5          # critic updates per generator update
    grad_clip: float = 5.0         # global-norm clip for the generator
    free_running: bool = False     # feed generated (not ground-truth) tokens when building soft captions

    # optimization
    batch_size: int = 128
    lr_gen: float = 8e-4
    lr_critic_start: float = 2e-4
    lr_critic_end: float = 8e-4
    epochs: int = 30

    # data / decoding
    max_caption_len: int = 26      # ids per encoded caption, bos/eos included
    min_count: int = 2             # vocabulary frequency threshold
    beam_width: int = 5
    val_fraction: float = 0.1      # videos carved out for per-epoch validation

    # reproducibility
    seed: int = 0
    single_thread: bool = True     # pin torch to one thread for bitwise-reproducible runs

    def __post_init__(self):
        if self.kernel_dim is None:
            self.kernel_dim = self.graph_dim
        if self.num_compare is None:
            self.num_compare = self.num_words
        self.validate()

    def validate(self):
        for name in ("graph_dim", "hidden_dim", "embed_dim", "sentence_dim", "kernel_dim",
                     "num_words", "num_compare", "mlb_dim", "batch_size", "epochs",
                     "beam_width", "min_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.critic_iters < 0:
            raise ConfigError(f"critic_iters must be >= 0, got {self.critic_iters}")
        if self.num_compare > self.num_words:
            raise ConfigError(f"num_compare ({self.num_compare}) exceeds num_words ({self.num_words})")
        for name in ("adv_weight", "penalty_weight", "lr_gen", "lr_critic_start", "lr_critic_end"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.lr_critic_start > self.lr_critic_end:
            raise ConfigError(
                f"lr_critic_start ({self.lr_critic_start}) must not exceed lr_critic_end ({self.lr_critic_end})"
            )
        if self.max_caption_len < 2:
            raise ConfigError(f"max_caption_len must be >= 2, got {self.max_caption_len}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be > 0, got {self.grad_clip}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def hash(self):
        """Stable digest of the resolved configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]
