"""Transformer encoder-decoder with a pointer-generator copy mechanism.

Pre-LN blocks, learned positions, and one word-embedding table plus one
positional table shared by encoder and decoder (the same Tensor objects,
asserted in tests). The decoder output distribution mixes a vocabulary
softmax with head-averaged final-layer cross-attention weights:

    P(y) = p_gen * softmax(gen_logits)[y]
           + (1 - p_gen) * sum_{j: src_ids[j] = y} copy_weight[j]

Copy operates on subword ids in the shared vocabulary, so every source
token is representable and no extended id space is needed. Dropout is
applied to embeddings, sublayer outputs, and the feedforward interior;
attention probabilities are never dropped so cross-attention rows stay
normalized for the copy mixture.

encode() is the seam where a pretrained contextual encoder could be
swapped in: downstream code consumes only EncoderState.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .params import ParameterStore
from .rng import substream
from .tokenizer import PAD


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    max_positions: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.decoder_layers < 1:
            raise ValueError("decoder_layers must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EncoderState:
    memory: ad.Tensor        # (B, S, d_model)
    src_ids: np.ndarray      # (B, S) int64
    src_mask: np.ndarray     # (B, S) uint8, 1 = padding


def _attn_param_names(prefix):
    return [f"{prefix}.{n}" for n in
            ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def build_model(config, seed, dtype=np.float32):
    """Create and initialize a ParameterStore for the model."""
    rng = substream(seed, "init")
    store = ParameterStore()
    d, f, v = config.d_model, config.d_ff, config.vocab_size

    def w(name, shape, partition, std=0.02):
        store.add(name, rng.normal(0.0, std, size=shape).astype(dtype), partition)

    def zeros(name, shape, partition):
        store.add(name, np.zeros(shape, dtype=dtype), partition)

    def ln(prefix, partition):
        store.add(f"{prefix}.g", np.ones(d, dtype=dtype), partition)
        zeros(f"{prefix}.b", (d,), partition)

    def attn(prefix, partition):
        for nm in ("wq", "wk", "wv", "wo"):
            w(f"{prefix}.{nm}", (d, d), partition)
        for nm in ("bq", "bk", "bv", "bo"):
            zeros(f"{prefix}.{nm}", (d,), partition)

    def ff(prefix, partition):
        w(f"{prefix}.w1", (d, f), partition)
        zeros(f"{prefix}.b1", (f,), partition)
        w(f"{prefix}.w2", (f, d), partition)
        zeros(f"{prefix}.b2", (d,), partition)

    w("emb.word", (v, d), "shared_embedding")
    w("emb.pos", (config.max_positions, d), "shared_embedding")

    for i in range(config.encoder_layers):
        ln(f"enc.{i}.ln1", "encoder")
        attn(f"enc.{i}.attn", "encoder")
        ln(f"enc.{i}.ln2", "encoder")
        ff(f"enc.{i}.ff", "encoder")
    ln("enc.ln", "encoder")

    for i in range(config.decoder_layers):
        ln(f"dec.{i}.ln1", "decoder")
        attn(f"dec.{i}.self", "decoder")
        ln(f"dec.{i}.ln2", "decoder")
        attn(f"dec.{i}.cross", "decoder")
        ln(f"dec.{i}.ln3", "decoder")
        ff(f"dec.{i}.ff", "decoder")
    ln("dec.ln", "decoder")
    w("dec.out.w", (d, v), "decoder")
    zeros("dec.out.b", (v,), "decoder")
    w("dec.pgen.w", (d, 1), "decoder")
    zeros("dec.pgen.b", (1,), "decoder")
    return store


def pad_mask(ids):
    return (np.asarray(ids) == PAD).astype(np.uint8)


def causal_mask(t):
    return np.triu(np.ones((t, t), dtype=np.uint8), k=1)


def _maybe_dropout(x, p, rng):
    if rng is None or p <= 0.0:
        return x
    return ad.dropout(x, p, rng)


def _layer_norm(store, prefix, x):
    y = ad.normalize(x)
    return ad.add(ad.mul(y, store[f"{prefix}.g"]), store[f"{prefix}.b"])


def _attention(store, prefix, q_in, kv_in, mask, config, rng, p):
    """Multi-head attention; returns (output, head-averaged probabilities).

    mask is uint8 broadcastable to (B, H, Tq, Tk) with 1 = excluded.
    """
    d, h = config.d_model, config.n_heads
    dk = d // h
    b, tq = q_in.shape[0], q_in.shape[1]
    tk = kv_in.shape[1]

    def proj(x, nm, t):
        y = ad.add(ad.matmul(x, store[f"{prefix}.w{nm}"]), store[f"{prefix}.b{nm}"])
        y = ad.reshape(y, (b, t, h, dk))
        return ad.transpose(y, (0, 2, 1, 3))  # (B, H, T, dk)

    q = proj(q_in, "q", tq)
    k = proj(kv_in, "k", tk)
    v = proj(kv_in, "v", tk)
    scores = ad.mul_const(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                          1.0 / math.sqrt(dk))
    probs = ad.softmax(scores, mask)  # (B, H, Tq, Tk)
    ctx = ad.matmul(probs, v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
    out = ad.add(ad.matmul(ctx, store[f"{prefix}.wo"]), store[f"{prefix}.bo"])
    out = _maybe_dropout(out, p, rng)
    head_avg = ad.scale(ad.reduce_sum(probs, axis=1), 1.0 / h)  # (B, Tq, Tk)
    return out, head_avg


def _feed_forward(store, prefix, x, rng, p):
    hidden = ad.relu(ad.add(ad.matmul(x, store[f"{prefix}.w1"]),
                            store[f"{prefix}.b1"]))
    hidden = _maybe_dropout(hidden, p, rng)
    out = ad.add(ad.matmul(hidden, store[f"{prefix}.w2"]), store[f"{prefix}.b2"])
    return _maybe_dropout(out, p, rng)


def _embed(store, config, ids, rng, p):
    b, t = ids.shape
    if t > config.max_positions:
        raise ValueError(f"sequence length {t} exceeds max positions "
                         f"{config.max_positions}")
    x = ad.mul_const(ad.embedding(store["emb.word"], ids),
                     math.sqrt(config.d_model))
    pos = ad.embedding(store["emb.pos"], np.arange(t))
    return _maybe_dropout(ad.add(x, pos), p, rng)


def encode(store, config, src_ids, rng=None, dropout_p=0.0):
    """Run the encoder stack; padding is masked out of attention."""
    src_ids = np.asarray(src_ids, dtype=np.int64)
    mask = pad_mask(src_ids)
    attn_mask = mask[:, None, None, :]
    x = _embed(store, config, src_ids, rng, dropout_p)
    for i in range(config.encoder_layers):
        normed = _layer_norm(store, f"enc.{i}.ln1", x)
        a, _ = _attention(store, f"enc.{i}.attn", normed, normed, attn_mask,
                          config, rng, dropout_p)
        x = ad.add(x, a)
        x = ad.add(x, _feed_forward(store, f"enc.{i}.ff",
                                    _layer_norm(store, f"enc.{i}.ln2", x),
                                    rng, dropout_p))
    x = _layer_norm(store, "enc.ln", x)
    return EncoderState(memory=x, src_ids=src_ids, src_mask=mask)


def decode_forward(store, config, state, tgt_in_ids, rng=None, dropout_p=0.0):
    """Teacher-forced decoder pass.

    Returns (final hidden states (B,T,D), head-averaged final-layer
    cross-attention (B,T,S)).
    """
    tgt_in_ids = np.asarray(tgt_in_ids, dtype=np.int64)
    b, t = tgt_in_ids.shape
    self_mask = causal_mask(t)[None, None, :, :]
    cross_mask = state.src_mask[:, None, None, :]
    x = _embed(store, config, tgt_in_ids, rng, dropout_p)
    cross_avg = None
    for i in range(config.decoder_layers):
        normed = _layer_norm(store, f"dec.{i}.ln1", x)
        a, _ = _attention(store, f"dec.{i}.self", normed, normed,
                          self_mask, config, rng, dropout_p)
        x = ad.add(x, a)
        c, cross_avg = _attention(store, f"dec.{i}.cross",
                                  _layer_norm(store, f"dec.{i}.ln2", x),
                                  state.memory, cross_mask,
                                  config, rng, dropout_p)
        x = ad.add(x, c)
        x = ad.add(x, _feed_forward(store, f"dec.{i}.ff",
                                    _layer_norm(store, f"dec.{i}.ln3", x),
                                    rng, dropout_p))
    x = _layer_norm(store, "dec.ln", x)
    return x, cross_avg


def output_distribution(store, config, hidden, cross_avg, state):
    """Mixture probabilities over the vocabulary, (B, T, V)."""
    gen_logits = ad.add(ad.matmul(hidden, store["dec.out.w"]), store["dec.out.b"])
    gen_probs = ad.softmax(gen_logits)
    b, t = hidden.shape[0], hidden.shape[1]
    p_gen = ad.sigmoid(ad.reshape(
        ad.add(ad.matmul(hidden, store["dec.pgen.w"]), store["dec.pgen.b"]),
        (b, t)))
    return ad.copy_mix(gen_probs, cross_avg, state.src_ids, p_gen)


def forward_probs(store, config, src_ids, tgt_in_ids, rng=None, dropout_p=0.0):
    """Encode + teacher-forced decode + mixture, in one call."""
    state = encode(store, config, src_ids, rng, dropout_p)
    hidden, cross_avg = decode_forward(store, config, state, tgt_in_ids,
                                       rng, dropout_p)
    return output_distribution(store, config, hidden, cross_avg, state)


def make_step_fn(store, config, src_ids_1d):
    """Single-sequence decoding interface.

    Returns fn(prefix_ids) -> float32 log-probability vector (V,). The
    prefix is recomputed in full each step, so every caller (greedy, beam,
    fusion) sees identical numbers for identical prefixes.
    """
    src = np.asarray(src_ids_1d, dtype=np.int64)[None, :]
    with ad.no_grad():
        state = encode(store, config, src)

    def step_fn(prefix_ids):
        with ad.no_grad():
            tgt_in = np.asarray(prefix_ids, dtype=np.int64)[None, :]
            hidden, cross_avg = decode_forward(store, config, state, tgt_in)
            probs = output_distribution(store, config, hidden, cross_avg, state)
        last = probs.data[0, -1]
        return np.log(np.maximum(last, 1e-12)).astype(np.float32)

    return step_fn
