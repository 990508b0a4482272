"""Shared test utilities: finite-difference gradient checking and tiny model builders."""

import numpy as np
import torch

from graphcap.config import TrainConfig
from graphcap.synthetic import synth_corpus
from graphcap import training


def fd_gradient(fn, tensor, step=1e-5):
    """Central finite differences of the scalar ``fn()`` w.r.t. every element of ``tensor``."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + step
        up = float(fn().detach())
        flat[i] = original - step
        down = float(fn().detach())
        flat[i] = original
        grad_flat[i] = (up - down) / (2.0 * step)
    return grad


def max_relative_error(analytic, numeric, floor=1e-3):
    """Worst-case elementwise relative error with a floor for near-zero pairs."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = torch.zeros_like(n) if a is None else a
        if n.numel() == 0:
            continue
        denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(n, floor))
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


def check_gradients(fn, tensors, step=1e-5, tol=1e-4):
    """Compare autograd gradients of scalar ``fn()`` against central differences.

    ``tensors`` are the leaves to differentiate (parameters and/or inputs);
    they must already require grad and should be float64 for the stated
    tolerances.  Returns the worst relative error.
    """
    value = fn()
    analytic = torch.autograd.grad(value, tensors, allow_unused=True)
    numeric = [fd_gradient(fn, t, step=step) for t in tensors]
    err = max_relative_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: max relative error {err:.3e} >= {tol}"
    return err


def manual_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def manual_layer_norm(x, weight, bias, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * weight + bias


def lstm_cell_oracle(x, h, c, weight_ih, weight_hh, bias_ih, bias_hh):
    """One LSTMCell step with torch's gate layout (input, forget, cell, output)."""
    gates = weight_ih @ x + bias_ih + weight_hh @ h + bias_hh
    hidden = h.shape[0]
    sigmoid = lambda z: 1.0 / (1.0 + np.exp(-z))
    i = sigmoid(gates[:hidden])
    f = sigmoid(gates[hidden : 2 * hidden])
    g = np.tanh(gates[2 * hidden : 3 * hidden])
    o = sigmoid(gates[3 * hidden :])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def tiny_config(**overrides):
    """Desk-scale configuration for fast tests."""
    base = dict(
        graph_dim=16, hidden_dim=16, embed_dim=8, sentence_dim=12, num_words=2,
        mlb_dim=4, batch_size=8, epochs=2, critic_iters=1, adv_weight=0.01,
        min_count=1, max_caption_len=10, val_fraction=0.2, seed=0, lr_gen=2e-3,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_corpus(num_scenes=16, seed=3, **kwargs):
    defaults = dict(banks=(5, 3, 2), frames=4, regions_per_frame=2, feature_dim=8, max_objects=2)
    defaults.update(kwargs)
    return synth_corpus(num_scenes, seed=seed, **defaults)


def train_tiny(num_scenes=16, cfg=None, **corpus_kwargs):
    videos, records = tiny_corpus(num_scenes, **corpus_kwargs)
    cfg = cfg or tiny_config()
    return training.train(videos, records, cfg), (videos, records)
