"""Adversarial training engine.

Per minibatch: one generator forward produces the visual words and the
teacher-forced soft caption; the critic takes ``critic_iters`` updates on
stop-gradient copies of those outputs; the generator then takes one update on
the caption NLL plus the (optionally zero-weighted) adversarial term.  The
critic's learning rate ramps linearly from ``lr_critic_start`` to
``lr_critic_end`` over the whole run.

Three independent RNG streams keep runs reproducible and keep the critic from
perturbing the generator's trajectory: parameter init (global torch seed,
generator built first), batch shuffling (numpy), and gradient-penalty
interpolation (a dedicated torch generator).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .bundle import captions_by_video
from .config import ConfigError, TrainConfig
from .encoder import VisualWords
from .metrics import cider, make_pairs
from .model import CaptionGenerator, build_generator, feature_dims, features_to_tensors
from .validator import CaptionValidator, gradient_penalty
from .vocab import PAD, Vocabulary, build_vocabulary, decode_tokens, encode_caption

CHECKPOINT_FORMAT = "graphcap-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """A loss term left the finite range; the message names the term."""


def _check_finite(**terms):
    for name, value in terms.items():
        if value is not None and not bool(torch.isfinite(torch.as_tensor(value)).all()):
            raise TrainingDiverged(f"non-finite training term: {name} = {value}")


def one_hot_rows(targets, vocab_size, dtype=torch.float32):
    """Token ids [B, T'] -> one-hot caption rows [B, T', V] (pad rows included)."""
    return F.one_hot(targets, vocab_size).to(dtype)


@dataclass
class GeneratorOutputs:
    nll: torch.Tensor            # scalar caption NLL (teacher-forced)
    soft: torch.Tensor           # [B, T', V] caption rows fed to the critic
    valid: torch.Tensor          # [B, T'] non-pad target positions
    words: VisualWords           # [B, K, Dg] per channel


def _free_running_rows(decoder, tokens, global_vec, words, valid):
    """Soft caption built by feeding the model its own argmax predictions."""
    batch, length = tokens.shape
    steps = int(valid.sum(dim=1).max().item())
    pad_row = torch.zeros(decoder.vocab_size, dtype=global_vec.dtype, device=tokens.device)
    pad_row[PAD] = 1.0
    state = decoder.init_state(batch, global_vec)
    prev = tokens[:, 0]
    rows = []
    for t in range(steps):
        log_probs, state = decoder.step(prev, global_vec, words, state)
        rows.append(torch.where(valid[:, t].unsqueeze(1), log_probs.exp(), pad_row.expand(batch, -1)))
        prev = log_probs.argmax(dim=-1).detach()
    for _ in range(steps, length - 1):
        rows.append(pad_row.expand(batch, -1))
    return torch.stack(rows, dim=1)


def generate_soft_caption(generator, appearance, motion, regions, tokens, free_running=False):
    """Run the generator over one batch; the soft caption keeps its gradient path."""
    words, gv = generator.encode(appearance, motion, regions)
    nll, soft, valid = generator.decoder.teacher_forced(tokens, gv, words)
    if free_running:
        soft = _free_running_rows(generator.decoder, tokens, gv, words, valid)
    return GeneratorOutputs(nll=nll, soft=soft, valid=valid, words=words)


def adversarial_value(validator, soft, valid, words, num_compare):
    """Critic value of the soft caption, with stop-gradient on the visual words.

    Gradients reach the generator only through the caption rows; the
    conditioning words are detached here.
    """
    return validator(
        soft, words.object.detach(), words.motion.detach(),
        valid=valid, num_compare=num_compare, check_input=False,
    ).mean()


def discriminator_step(validator, optimizer, real_rows, outputs, cfg, gp_rng=None, lr=None):
    """One critic update; generator outputs enter through stop-gradient copies."""
    soft = outputs.soft.detach()
    words_o = outputs.words.object.detach()
    words_m = outputs.words.motion.detach()

    def critic(rows):
        return validator(rows, words_o, words_m, valid=outputs.valid,
                         num_compare=cfg.num_compare, check_input=False)

    value_generated = critic(soft).mean()
    value_real = critic(real_rows).mean()
    penalty = gradient_penalty(critic, real_rows, soft, cfg.penalty_weight, rng=gp_rng)
    loss = value_generated - value_real + penalty
    _check_finite(
        critic_value_generated=value_generated, critic_value_real=value_real,
        gradient_penalty=penalty,
    )

    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return {
        "loss": float(loss.detach()),
        "value_generated": float(value_generated.detach()),
        "value_real": float(value_real.detach()),
        "penalty": float(penalty.detach()),
    }


def generator_step(generator, validator, optimizer, outputs, cfg):
    """One generator update on caption NLL plus the weighted adversarial term.

    With ``adv_weight == 0`` the critic is not evaluated at all, so the update
    is bit-identical to plain cross-entropy training.
    """
    caption_nll = outputs.nll
    if cfg.adv_weight > 0:
        if validator is None:
            raise ConfigError("adv_weight > 0 requires a validator")
        adversarial = -adversarial_value(validator, outputs.soft, outputs.valid,
                                         outputs.words, cfg.num_compare)
        loss = caption_nll + cfg.adv_weight * adversarial
    else:
        adversarial = None
        loss = caption_nll
    _check_finite(caption_nll=caption_nll, adversarial=adversarial)

    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(generator.parameters(), cfg.grad_clip)
    optimizer.step()
    return {
        "loss": float(loss.detach()),
        "caption_nll": float(caption_nll.detach()),
        "adversarial": None if adversarial is None else float(adversarial.detach()),
    }


def critic_lr(cfg, step, total_steps):
    """Linear ramp from lr_critic_start to lr_critic_end over the whole run."""
    if total_steps <= 1:
        return cfg.lr_critic_end
    frac = min(step / (total_steps - 1), 1.0)
    return cfg.lr_critic_start + frac * (cfg.lr_critic_end - cfg.lr_critic_start)


# ---------------------------------------------------------------------------
# data plumbing

@dataclass
class _Sample:
    video_index: int
    tokens: np.ndarray


def _build_samples(videos, records, vocab, max_len):
    index = {v.video_id: i for i, v in enumerate(videos)}
    samples = []
    for video_id, text in records:
        if video_id not in index:
            raise ValueError(f"caption references unknown video id {video_id!r}")
        samples.append(_Sample(index[video_id], encode_caption(text, vocab, max_len)))
    if not samples:
        raise ValueError("no caption records to train on")
    return samples


def _epoch_batches(videos, samples, batch_size, rng):
    """Shuffle samples, bucket by video tensor shape, chunk into batches."""
    order = rng.permutation(len(samples))
    buckets = {}
    for i in order:
        v = videos[samples[i].video_index]
        key = (v.num_frames, v.regions_per_frame, v.dims)
        buckets.setdefault(key, []).append(int(i))
    batches = []
    for key in sorted(buckets):
        bucket = buckets[key]
        batches.extend(bucket[i : i + batch_size] for i in range(0, len(bucket), batch_size))
    return batches


def _collate(videos, samples, batch, dtype):
    members = [samples[i] for i in batch]
    vids = [videos[s.video_index] for s in members]
    appearance, motion, regions = features_to_tensors(vids, dtype=dtype)
    tokens = torch.as_tensor(np.stack([s.tokens for s in members]), dtype=torch.int64)
    return appearance, motion, regions, tokens


def _split_validation(videos, records, cfg):
    """Carve a deterministic validation split out of the corpus."""
    if cfg.val_fraction <= 0 or len(videos) < 2:
        return videos, records, [], {}
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5EED)))
    count = min(max(1, int(round(len(videos) * cfg.val_fraction))), len(videos) - 1)
    val_idx = set(rng.choice(len(videos), size=count, replace=False).tolist())
    val_ids = {videos[i].video_id for i in val_idx}
    train_videos = [v for i, v in enumerate(videos) if i not in val_idx]
    train_records = [(vid, cap) for vid, cap in records if vid not in val_ids]
    val_videos = [videos[i] for i in sorted(val_idx)]
    val_refs = captions_by_video([(vid, cap) for vid, cap in records if vid in val_ids])
    return train_videos, train_records, val_videos, val_refs


# ---------------------------------------------------------------------------
# checkpointing

@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocabulary
    dims: tuple
    epoch: int
    history: list
    generator_state: dict
    validator_state: dict | None
    opt_generator_state: dict | None
    opt_validator_state: dict | None
    rng_state: dict | None

    def build_generator(self):
        generator = build_generator(self.config, self.dims, len(self.vocab))
        generator.load_state_dict(self.generator_state)
        return generator

    def build_validator(self):
        if self.validator_state is None:
            return None
        validator = _build_validator(self.config, len(self.vocab))
        validator.load_state_dict(self.validator_state)
        return validator


def _build_validator(cfg, vocab_size):
    return CaptionValidator(
        vocab_size=vocab_size, sentence_dim=cfg.sentence_dim, graph_dim=cfg.graph_dim,
        mlb_dim=cfg.mlb_dim, kernel_dim=cfg.kernel_dim,
    )


def save_checkpoint(path, *, generator, validator, opt_generator, opt_validator,
                    cfg, vocab, dims, epoch, history, rng_state=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "vocab_tokens": vocab.tokens,
        "dims": tuple(int(d) for d in dims),
        "epoch": int(epoch),
        "history": list(history),
        "generator": generator.state_dict(),
        "validator": None if validator is None else validator.state_dict(),
        "opt_generator": None if opt_generator is None else opt_generator.state_dict(),
        "opt_validator": None if opt_validator is None else opt_validator.state_dict(),
        "rng": rng_state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a graphcap checkpoint")
    cfg = TrainConfig.from_dict(payload["config"])
    if payload.get("config_hash") != cfg.hash():
        raise ValueError(f"{path}: config hash mismatch (corrupted or hand-edited checkpoint)")
    return Checkpoint(
        config=cfg,
        vocab=Vocabulary.from_tokens(payload["vocab_tokens"]),
        dims=tuple(payload["dims"]),
        epoch=payload["epoch"],
        history=payload["history"],
        generator_state=payload["generator"],
        validator_state=payload["validator"],
        opt_generator_state=payload["opt_generator"],
        opt_validator_state=payload["opt_validator"],
        rng_state=payload.get("rng"),
    )


# ---------------------------------------------------------------------------
# the training loop

@dataclass
class TrainResult:
    generator: CaptionGenerator
    validator: CaptionValidator | None
    vocab: Vocabulary
    config: TrainConfig
    dims: tuple
    history: list = field(default_factory=list)
    checkpoint_path: Path | None = None


def train(videos, records, cfg, vocab=None, val_videos=None, val_references=None,
          checkpoint_path=None, log_path=None, resume=None, progress=None):
    """Run the full alternating training loop over a feature corpus.

    ``records`` is a flat list of (video_id, caption) pairs.  Returns a
    :class:`TrainResult`; when ``checkpoint_path`` is given the checkpoint is
    rewritten after every epoch so interrupted runs can resume.
    """
    cfg.validate()
    if cfg.single_thread:
        torch.set_num_threads(1)

    if vocab is None:
        vocab = build_vocabulary([text for _, text in records], min_count=cfg.min_count)
    dims = feature_dims(videos)

    if val_videos is None:
        videos, records, val_videos, val_references = _split_validation(videos, records, cfg)
    elif val_videos and val_references is None:
        raise ValueError("val_videos given without val_references")

    samples = _build_samples(videos, records, vocab, cfg.max_caption_len)

    torch.manual_seed(cfg.seed)  # generator is built first so its init never
    generator = build_generator(cfg, dims, len(vocab))  # depends on critic settings
    need_validator = cfg.adv_weight > 0 or cfg.critic_iters > 0
    validator = _build_validator(cfg, len(vocab)) if need_validator else None

    opt_generator = torch.optim.Adam(generator.parameters(), lr=cfg.lr_gen)
    opt_validator = (
        torch.optim.Adam(validator.parameters(), lr=cfg.lr_critic_start) if validator else None
    )

    data_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xDA7A)))
    gp_rng = torch.Generator().manual_seed(cfg.seed + 0x6B)

    history = []
    start_epoch = 0
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        # the epoch budget may grow on resume; everything else must match
        if ckpt.config.replace(epochs=cfg.epochs).hash() != cfg.hash():
            raise ConfigError("resume checkpoint was trained with a different configuration")
        generator.load_state_dict(ckpt.generator_state)
        if validator is not None and ckpt.validator_state is not None:
            validator.load_state_dict(ckpt.validator_state)
        if ckpt.opt_generator_state is not None:
            opt_generator.load_state_dict(ckpt.opt_generator_state)
        if opt_validator is not None and ckpt.opt_validator_state is not None:
            opt_validator.load_state_dict(ckpt.opt_validator_state)
        if ckpt.rng_state is not None:
            torch.set_rng_state(ckpt.rng_state["torch"])
            gp_rng.set_state(ckpt.rng_state["gp"])
            data_rng.bit_generator.state = ckpt.rng_state["data"]
        history = list(ckpt.history)
        start_epoch = ckpt.epoch

    batches_per_epoch = len(_epoch_batches(videos, samples, cfg.batch_size,
                                           np.random.default_rng(0)))
    total_critic_steps = cfg.epochs * batches_per_epoch * cfg.critic_iters
    critic_step = start_epoch * batches_per_epoch * cfg.critic_iters

    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "a" if resume is not None else "w")

    run_critic = validator is not None and cfg.critic_iters > 0
    try:
        for epoch in range(start_epoch, cfg.epochs):
            caption_losses, critic_losses, adversarial_losses = [], [], []
            critic_abs_max = 0.0
            for batch in _epoch_batches(videos, samples, cfg.batch_size, data_rng):
                appearance, motion, regions, tokens = _collate(videos, samples, batch, torch.float32)
                outputs = generate_soft_caption(
                    generator, appearance, motion, regions, tokens, free_running=cfg.free_running
                )
                if run_critic:
                    real = one_hot_rows(tokens[:, 1:], len(vocab), outputs.soft.dtype)
                    for _ in range(cfg.critic_iters):
                        lr = critic_lr(cfg, critic_step, total_critic_steps)
                        stats = discriminator_step(
                            validator, opt_validator, real, outputs, cfg, gp_rng=gp_rng, lr=lr
                        )
                        critic_step += 1
                        critic_losses.append(stats["loss"])
                        critic_abs_max = max(critic_abs_max, abs(stats["loss"]))
                gen_stats = generator_step(generator, validator, opt_generator, outputs, cfg)
                caption_losses.append(gen_stats["caption_nll"])
                if gen_stats["adversarial"] is not None:
                    adversarial_losses.append(gen_stats["adversarial"])

            row = {
                "epoch": epoch + 1,
                "loss_caption": float(np.mean(caption_losses)),
                "loss_critic": float(np.mean(critic_losses)) if critic_losses else None,
                "loss_critic_abs_max": critic_abs_max if critic_losses else None,
                "loss_adversarial": float(np.mean(adversarial_losses)) if adversarial_losses else None,
                "lr_critic": critic_lr(cfg, max(critic_step - 1, 0), total_critic_steps) if run_critic else None,
                "val_cider": None,
            }
            if val_videos:
                candidates = _decode_with(generator, vocab, cfg, val_videos, beam=1)
                row["val_cider"] = cider(make_pairs(candidates, val_references))
            history.append(row)
            if log_file is not None:
                log_file.write(json.dumps(row) + "\n")
                log_file.flush()
            if progress is not None:
                progress(row)
            if checkpoint_path is not None:
                rng_state = {
                    "torch": torch.get_rng_state(),
                    "gp": gp_rng.get_state(),
                    "data": data_rng.bit_generator.state,
                }
                save_checkpoint(
                    checkpoint_path, generator=generator, validator=validator,
                    opt_generator=opt_generator, opt_validator=opt_validator,
                    cfg=cfg, vocab=vocab, dims=dims, epoch=epoch + 1,
                    history=history, rng_state=rng_state,
                )
    finally:
        if log_file is not None:
            log_file.close()

    return TrainResult(
        generator=generator, validator=validator, vocab=vocab, config=cfg,
        dims=dims, history=history,
        checkpoint_path=None if checkpoint_path is None else Path(checkpoint_path),
    )


# ---------------------------------------------------------------------------
# decoding with a trained model

def _decode_with(generator, vocab, cfg, videos, beam=None):
    """Decode a video collection to caption strings keyed by video id."""
    beam = cfg.beam_width if beam is None else beam
    generator.eval()
    out = {}
    if beam == 1:
        groups = {}
        for i, v in enumerate(videos):
            groups.setdefault((v.num_frames, v.regions_per_frame, v.dims), []).append(i)
        for key in sorted(groups):
            members = [videos[i] for i in groups[key]]
            appearance, motion, regions = features_to_tensors(members)
            ids = generator.greedy(appearance, motion, regions, cfg.max_caption_len)
            for v, row in zip(members, ids):
                out[v.video_id] = " ".join(decode_tokens(row.numpy(), vocab))
    else:
        for v in videos:
            appearance, motion, regions = features_to_tensors([v])
            ids = generator.beam(appearance, motion, regions, beam, cfg.max_caption_len)
            out[v.video_id] = " ".join(decode_tokens(ids.numpy(), vocab))
    generator.train()
    return out


def _as_model(source):
    """Accept a TrainResult, Checkpoint, or checkpoint path."""
    if isinstance(source, TrainResult):
        return source.generator, source.vocab, source.config
    if isinstance(source, (str, Path)):
        source = load_checkpoint(source)
    if isinstance(source, Checkpoint):
        return source.build_generator(), source.vocab, source.config
    raise TypeError(f"cannot decode with {type(source).__name__}")


def decode_videos(source, videos, beam=None):
    generator, vocab, cfg = _as_model(source)
    return _decode_with(generator, vocab, cfg, videos, beam=beam)
