"""Greedy and beam-search decoding with Wu-style length normalization.

Beam search keeps the `beam_size` highest raw-logprob partials; a
hypothesis that emits EOS moves to the finished pool and consumes its slot
for that step, which is what makes beam_size=1 reproduce greedy decoding
byte for byte. Finished hypotheses are ranked by raw / lp(length).

`batched_greedy` is a pure-numpy incremental decoder with per-layer key/
value caches. It exists because dev-set evaluation inside training is the
hot path; it mirrors the model's forward semantics exactly (same kernels),
differing from the full-prefix recompute only in float summation order.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import encode
from .tokenizer import BOS, EOS
from . import autodiff as ad


def lp(length, alpha):
    """Length penalty (5 + |Y|)^alpha / 6^alpha; lp(1) == 1 exactly."""
    return (5.0 + length) ** alpha / 6.0 ** alpha


@dataclass
class Hypothesis:
    ids: list           # [BOS, ..., maybe EOS]
    raw: float          # cumulative log probability
    normalized: float   # raw / lp(generated length)
    finished: bool

    @property
    def generated(self):
        return len(self.ids) - 1


def greedy_decode(step_fn, max_len, bos=BOS, eos=EOS):
    """Argmax token per step until EOS or `max_len` generated tokens."""
    ids = [bos]
    for _ in range(max_len):
        logp = step_fn(ids)
        y = int(np.argmax(logp))
        ids.append(y)
        if y == eos:
            break
    return ids


def _rank_key(raw, ids):
    return (-raw, len(ids), ids)


def beam_search(step_fn, beam_size=10, alpha=0.6, max_len=48,
                bos=BOS, eos=EOS):
    """Returns hypotheses ranked best first.

    If nothing finished within max_len, the best unfinished hypothesis is
    returned flagged finished=False.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    active = [Hypothesis([bos], 0.0, 0.0, False)]
    finished = []
    for _ in range(max_len):
        candidates = []
        for hyp in active:
            logp = step_fn(hyp.ids)
            # deterministic top tokens: score desc, token id asc on ties
            order = np.lexsort((np.arange(logp.shape[0]), -logp))
            for y in order[:beam_size]:
                y = int(y)
                candidates.append((hyp.raw + float(logp[y]), hyp.ids + [y]))
        candidates.sort(key=lambda c: _rank_key(c[0], c[1]))
        active = []
        for raw, ids in candidates[:beam_size]:
            h = Hypothesis(ids, raw, raw / lp(len(ids) - 1, alpha),
                           ids[-1] == eos)
            if h.finished:
                finished.append(h)
            else:
                active.append(h)
        if not active:
            break
        if len(finished) >= beam_size:
            bound = max(h.raw for h in active) / lp(max_len, alpha)
            worst_kept = sorted(
                finished, key=lambda h: _rank_key(h.normalized, h.ids)
            )[beam_size - 1].normalized
            if bound <= worst_kept:
                break
    finished.sort(key=lambda h: _rank_key(h.normalized, h.ids))
    if finished:
        return finished
    active.sort(key=lambda h: _rank_key(h.normalized, h.ids))
    return active[:1]


def _heads(x, n_heads):
    b, t, d = x.shape
    dk = d // n_heads
    return x.reshape(b, t, n_heads, dk).transpose(0, 2, 1, 3)


def _linear(x, w, b):
    return x @ w + b


def _ln(x, g, b):
    y, _ = kernels.norm_fwd(x)
    return y * g + b


def batched_greedy(store, config, src_batch, max_len):
    """Greedy-decode a whole padded batch with per-layer KV caches.

    src_batch: (B, S) int64 with PAD padding. Returns a list of id lists,
    each truncated just after the first EOS when one was produced.
    """
    with ad.no_grad():
        state = encode(store, config, src_batch)
    memory = state.memory.data
    b = memory.shape[0]
    h, d = config.n_heads, config.d_model
    dk = d // h
    g = lambda name: store[name].data

    cross_k, cross_v = [], []
    for i in range(config.decoder_layers):
        p = f"dec.{i}.cross"
        cross_k.append(_heads(_linear(memory, g(p + ".wk"), g(p + ".bk")), h))
        cross_v.append(_heads(_linear(memory, g(p + ".wv"), g(p + ".bv")), h))
    cross_mask = np.broadcast_to(state.src_mask[:, None, :],
                                 (b, h, state.src_mask.shape[1]))

    self_k = [None] * config.decoder_layers
    self_v = [None] * config.decoder_layers
    ids = np.full((b, 1), BOS, dtype=np.int64)
    alive = np.ones(b, dtype=bool)
    scale = math.sqrt(d)

    for t in range(max_len):
        x = (g("emb.word")[ids[:, -1]] * scale + g("emb.pos")[t]).astype(
            g("emb.word").dtype)
        for i in range(config.decoder_layers):
            p = f"dec.{i}"
            y = _ln(x, g(p + ".ln1.g"), g(p + ".ln1.b"))
            q = _heads(_linear(y, g(p + ".self.wq"), g(p + ".self.bq"))[:, None], h)
            k = _heads(_linear(y, g(p + ".self.wk"), g(p + ".self.bk"))[:, None], h)
            v = _heads(_linear(y, g(p + ".self.wv"), g(p + ".self.bv"))[:, None], h)
            self_k[i] = k if self_k[i] is None else np.concatenate(
                [self_k[i], k], axis=2)
            self_v[i] = v if self_v[i] is None else np.concatenate(
                [self_v[i], v], axis=2)
            scores = (q @ self_k[i].transpose(0, 1, 3, 2)) / math.sqrt(dk)
            probs = kernels.softmax_fwd(scores)
            ctx = (probs @ self_v[i])[:, :, 0].reshape(b, d)
            x = x + _linear(ctx, g(p + ".self.wo"), g(p + ".self.bo"))

            y = _ln(x, g(p + ".ln2.g"), g(p + ".ln2.b"))
            q = _heads(_linear(y, g(p + ".cross.wq"), g(p + ".cross.bq"))[:, None], h)
            scores = (q @ cross_k[i].transpose(0, 1, 3, 2))[:, :, 0] / math.sqrt(dk)
            probs = kernels.softmax_fwd(scores, np.ascontiguousarray(cross_mask))
            ctx = (probs[:, :, None, :] @ cross_v[i])[:, :, 0].reshape(b, d)
            x = x + _linear(ctx, g(p + ".cross.wo"), g(p + ".cross.bo"))
            copy_w = probs.mean(axis=1)  # (B, S), last layer's survives

            y = _ln(x, g(p + ".ln3.g"), g(p + ".ln3.b"))
            inner = np.maximum(_linear(y, g(p + ".ff.w1"), g(p + ".ff.b1")), 0)
            x = x + _linear(inner, g(p + ".ff.w2"), g(p + ".ff.b2"))

        hid = _ln(x, g("dec.ln.g"), g("dec.ln.b"))
        gen = kernels.softmax_fwd(_linear(hid, g("dec.out.w"), g("dec.out.b")))
        pg = 1.0 / (1.0 + np.exp(-(_linear(hid, g("dec.pgen.w"),
                                           g("dec.pgen.b"))[:, 0])))
        mix = kernels.copy_mix_fwd(
            np.ascontiguousarray(gen[:, None, :]),
            np.ascontiguousarray(copy_w[:, None, :].astype(gen.dtype)),
            state.src_ids, np.ascontiguousarray(pg[:, None].astype(gen.dtype)))
        y_next = np.argmax(mix[:, 0], axis=-1).astype(np.int64)
        ids = np.concatenate([ids, y_next[:, None]], axis=1)
        alive &= y_next != EOS
        if not alive.any():
            break
        if t + 2 >= config.max_positions:
            break

    out = []
    for row in ids:
        row = row.tolist()
        try:
            row = row[:row.index(EOS) + 1]
        except ValueError:
            pass
        out.append(row)
    return out
