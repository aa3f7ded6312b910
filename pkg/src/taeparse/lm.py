"""Decoder-only transformer language model over target code.

Shares the subword vocabulary with the seq2seq model and reuses its
pre-LN blocks, minus cross-attention and the copy mechanism. Used for
shallow fusion at decode time.
"""

import math
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .model import (_attention, _embed, _feed_forward, _layer_norm,
                    causal_mask)
from .optim import Adam
from .params import ParameterStore
from .rng import substream
from .tokenizer import PAD


@dataclass
class LMConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    layers: int = 2
    d_ff: int = 256
    dropout: float = 0.1
    max_positions: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def build_lm(config, seed, dtype=np.float32):
    """Fresh LM parameters from the named init substream."""
    rng = substream(seed, "init")
    store = ParameterStore()

    def w(name, shape, std=0.02):
        store.add(name, rng.normal(0.0, std, size=shape).astype(dtype),
                  "decoder")

    def zeros(name, shape):
        store.add(name, np.zeros(shape, dtype=dtype), "decoder")

    def ln(prefix):
        store.add(f"{prefix}.g", np.ones(config.d_model, dtype=dtype),
                  "decoder")
        zeros(f"{prefix}.b", (config.d_model,))

    d = config.d_model
    w("emb.word", (config.vocab_size, d))
    w("emb.pos", (config.max_positions, d))
    for i in range(config.layers):
        ln(f"lm.{i}.ln1")
        for nm in ("q", "k", "v", "o"):
            w(f"lm.{i}.self.w{nm}", (d, d))
            zeros(f"lm.{i}.self.b{nm}", (d,))
        ln(f"lm.{i}.ln2")
        w(f"lm.{i}.ff.w1", (d, config.d_ff))
        zeros(f"lm.{i}.ff.b1", (config.d_ff,))
        w(f"lm.{i}.ff.w2", (config.d_ff, d))
        zeros(f"lm.{i}.ff.b2", (d,))
    ln("lm.ln")
    w("lm.out.w", (d, config.vocab_size))
    zeros("lm.out.b", (config.vocab_size,))
    return store


def lm_forward(store, config, ids, rng=None, dropout_p=0.0):
    """Causal forward pass; returns logits (B, T, V)."""
    ids = np.asarray(ids, dtype=np.int64)
    t = ids.shape[1]
    mask = causal_mask(t)[None, None, :, :]
    x = _embed(store, config, ids, rng, dropout_p)
    for i in range(config.layers):
        normed = _layer_norm(store, f"lm.{i}.ln1", x)
        a, _ = _attention(store, f"lm.{i}.self", normed, normed, mask,
                          config, rng, dropout_p)
        x = ad.add(x, a)
        x = ad.add(x, _feed_forward(store, f"lm.{i}.ff",
                                    _layer_norm(store, f"lm.{i}.ln2", x),
                                    rng, dropout_p))
    x = _layer_norm(store, "lm.ln", x)
    return ad.add(ad.matmul(x, store["lm.out.w"]), store["lm.out.b"])


def _nll(store, config, batch, rng=None, dropout_p=0.0):
    """(summed token NLL Tensor, token count) for next-token prediction."""
    inp, out = batch[:, :-1], batch[:, 1:]
    logits = lm_forward(store, config, inp, rng, dropout_p)
    logp = ad.log_clipped(ad.softmax(logits))
    picked = ad.reshape(ad.gather_last(logp, out[..., None]), out.shape)
    mask = (out != PAD).astype(np.float32)
    total = ad.reduce_sum(ad.mul_const(picked, mask))
    return ad.scale(total, -1.0), float(mask.sum())


def perplexity(store, config, seqs, batch_size=64):
    """exp(mean token NLL) over encoded sequences, without dropout."""
    total, count = 0.0, 0.0
    for lo in range(0, len(seqs), batch_size):
        batch = _pad(seqs[lo:lo + batch_size])
        with ad.no_grad(), ad.Tape():
            nll, n = _nll(store, config, batch)
        total += float(nll.data)
        count += n
    return math.exp(total / max(1.0, count))


def _pad(seqs):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def train_lm(seqs, config, seed=0, lr=1e-3, batch_size=32, epochs=10,
             holdout_fraction=0.1, log=None):
    """Train on encoded programs; keep the checkpoint with best held-out
    perplexity. Returns (store, history)."""
    if not seqs:
        raise ValueError("empty corpus")
    n_hold = int(round(holdout_fraction * len(seqs)))
    if holdout_fraction > 0.0:
        n_hold = min(max(1, n_hold), len(seqs) - 1)
    if n_hold > 0:
        train_seqs = seqs[:len(seqs) - n_hold]
        hold_seqs = seqs[len(seqs) - n_hold:]
    else:
        # no holdout: select the best checkpoint on training perplexity
        train_seqs = hold_seqs = seqs
    store = build_lm(config, seed)
    adam = Adam(store, {"decoder": lr})
    rng_order = substream(seed, "data-order")
    rng_drop = substream(seed, "dropout")
    history = [{"epoch": -1, "holdout_ppl": perplexity(store, config,
                                                       hold_seqs)}]
    best_values, best_ppl = store.snapshot(), history[0]["holdout_ppl"]
    for epoch in range(epochs):
        order = rng_order.permutation(len(train_seqs))
        for lo in range(0, len(order), batch_size):
            batch = _pad([train_seqs[i] for i in order[lo:lo + batch_size]])
            store.zero_grad()
            with ad.Tape() as tape:
                nll, n = _nll(store, config, batch, rng_drop, config.dropout)
                loss = ad.scale(nll, 1.0 / n)
                tape.backward(loss)
            adam.step()
        ppl = perplexity(store, config, hold_seqs)
        history.append({"epoch": epoch, "holdout_ppl": ppl})
        if ppl < best_ppl:
            best_ppl, best_values = ppl, store.snapshot()
        if log is not None:
            log.append(history[-1])
    store.load_values(best_values)
    return store, history


def make_lm_step_fn(store, config):
    """prefix ids -> final-position logits (V,), float32, no dropout."""
    def step_fn(prefix_ids):
        ids = np.asarray(prefix_ids, dtype=np.int64)[None, :]
        with ad.no_grad(), ad.Tape():
            logits = lm_forward(store, config, ids)
        return logits.data[0, -1].astype(np.float32)
    return step_fn
