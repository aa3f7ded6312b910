"""Training loop for L_sup and L_full with per-branch gradient routing.

The supervised branch updates encoder, decoder, and shared embeddings. The
monolingual (autoencoding) branch feeds the program as both source and
target; with freezing on, the encoder runs outside the tape, so encoder
parameters receive no gradient and their Adam state does not advance. The
shared embeddings are treated as decoder-side by default and keep learning
from the monolingual branch through decoder input/output usage; the
stricter `embedding_routing="frozen"` variant excludes them there too.

One seed feeds named substreams (init, dropout, data order) so whole runs
are bit-reproducible.
"""

import json
import time
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .corpus import attach_dummy_sources
from .decoding import batched_greedy
from .model import (ModelConfig, build_model, decode_forward, encode,
                    output_distribution)
from .optim import Adam, Polyak, swapped_params
from .rng import substream
from .tokenizer import EOS, PAD

MODES = ("baseline", "tae", "tae-nofreeze", "dummy-source", "backtranslation")


@dataclass
class TrainConfig:
    mode: str = "baseline"
    seed: int = 0
    encoder_lr: float = 1e-5
    decoder_lr: float = 7.5e-5
    label_smoothing: float = 0.1
    polyak_momentum: float = 0.999
    batch_size: int = 32
    mixing_ratio: float = 2.0      # monolingual batches per supervised batch
    patience: int = 10
    max_epochs: int = 40
    freeze_encoder_on_mono: bool = True
    embedding_routing: str = "decoder-side"   # or "frozen"
    dummy_source_max_len: int = 8
    dev_metric: str = "em"         # "em" or "bleu" (backward models)
    synthetic_weight: float = 1.0  # loss weight for synthetic bitext

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "tae-nofreeze":
            self.freeze_encoder_on_mono = False
        if not (self.encoder_lr > 0 and self.decoder_lr > 0):
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.polyak_momentum < 1.0:
            raise ValueError("polyak momentum must be in (0,1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label smoothing must be in [0,1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.embedding_routing not in ("decoder-side", "frozen"):
            raise ValueError("embedding_routing must be decoder-side|frozen")

    def to_dict(self):
        return asdict(self)


def smoothed_target(gold_ids, eps, vocab_size):
    """q = (1 - eps) * onehot(gold) + eps / V, as a constant array."""
    gold_ids = np.asarray(gold_ids)
    q = np.full(gold_ids.shape + (vocab_size,), eps / vocab_size,
                dtype=np.float32)
    np.put_along_axis(q, gold_ids[..., None],
                      np.float32((1.0 - eps) + eps / vocab_size), axis=-1)
    return q


def pad_batch(seqs, pad=PAD):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def clip_ids(ids, limit):
    """Truncate an encoded sequence to the position budget, keeping EOS.

    Synthetic sources can re-tokenize to more pieces than were decoded,
    so anything headed for the model gets clipped here.
    """
    if len(ids) <= limit:
        return ids
    clipped = list(ids[:limit])
    clipped[-1] = EOS
    return clipped


def sequence_loss(store, config, src_ids, tgt_ids, eps, rng=None,
                  dropout_p=0.0, state=None, example_weights=None):
    """Mean label-smoothed cross-entropy over non-PAD target positions.

    example_weights, if given, scales each row's token losses (and its
    share of the normalizer), e.g. to down-weight synthetic bitext.
    """
    tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
    tgt_in, tgt_out = tgt_ids[:, :-1], tgt_ids[:, 1:]
    if state is None:
        state = encode(store, config, src_ids, rng, dropout_p)
    hidden, cross_avg = decode_forward(store, config, state, tgt_in,
                                       rng, dropout_p)
    probs = output_distribution(store, config, hidden, cross_avg, state)
    logp = ad.log_clipped(probs)
    q = smoothed_target(tgt_out, eps, config.vocab_size)
    mask = (tgt_out != PAD).astype(np.float32)
    if example_weights is not None:
        mask = mask * np.asarray(example_weights,
                                 dtype=np.float32)[:, None]
    n_tokens = float(mask.sum())
    ce = ad.reduce_sum(ad.mul_const(logp, q), axis=2)
    total = ad.reduce_sum(ad.mul_const(ce, mask))
    return ad.scale(total, -1.0 / n_tokens), n_tokens


def sequence_log_likelihood(store, config, src_ids, tgt_ids, eps=0.0):
    """Single-example loss (see sequence_loss); src/tgt are id lists."""
    with ad.Tape():
        loss, _ = sequence_loss(store, config,
                                np.asarray(src_ids)[None, :],
                                np.asarray(tgt_ids)[None, :], eps)
    return float(loss.data)


class TrainState:
    def __init__(self, model_config, train_config, store=None):
        self.mcfg = model_config
        self.tcfg = train_config
        self.store = store if store is not None else build_model(
            model_config, train_config.seed)
        lrs = {"encoder": train_config.encoder_lr,
               "decoder": train_config.decoder_lr,
               "shared_embedding": train_config.decoder_lr}
        self.adam = Adam(self.store, lrs)
        self.polyak = Polyak(self.store, train_config.polyak_momentum)
        self.rng_dropout = substream(train_config.seed, "dropout")
        self.rng_order = substream(train_config.seed, "data-order")

    def _apply(self, names):
        self.adam.step(names)
        self.polyak.update(self.store)

    def supervised_step(self, src_batch, tgt_batch, example_weights=None):
        """Gradients to encoder, decoder, and shared embeddings."""
        if len(src_batch) == 0:
            raise ValueError("empty batch")
        self.store.zero_grad()
        with ad.Tape() as tape:
            loss, _ = sequence_loss(self.store, self.mcfg, src_batch,
                                    tgt_batch, self.tcfg.label_smoothing,
                                    self.rng_dropout, self.mcfg.dropout,
                                    example_weights=example_weights)
            tape.backward(loss)
        self._apply(self.store.names())
        return float(loss.data)

    def tae_step(self, tgt_batch, src_batch=None):
        """Autoencoding step: the program is both source and target.

        With freeze_encoder_on_mono, the encoder runs as a fixed feature
        extractor (no tape, no dropout) and only decoder-side parameters
        update. src_batch overrides the source for the dummy-source mode.
        """
        if len(tgt_batch) == 0:
            raise ValueError("empty batch")
        if src_batch is None:
            src_batch = tgt_batch
        freeze = self.tcfg.freeze_encoder_on_mono
        self.store.zero_grad()
        with ad.Tape() as tape:
            if freeze:
                with ad.no_grad():
                    state = encode(self.store, self.mcfg, src_batch)
            else:
                state = encode(self.store, self.mcfg, src_batch,
                               self.rng_dropout, self.mcfg.dropout)
            loss, _ = sequence_loss(self.store, self.mcfg, src_batch,
                                    tgt_batch, self.tcfg.label_smoothing,
                                    self.rng_dropout, self.mcfg.dropout,
                                    state=state)
            tape.backward(loss)
        if not freeze:
            names = self.store.names()
        elif self.tcfg.embedding_routing == "decoder-side":
            names = self.store.names_by_partition("decoder",
                                                  "shared_embedding")
        else:
            names = self.store.names_by_partition("decoder")
        self._apply(names)
        return float(loss.data)

    def combined_loss(self, sup_src, sup_tgt, mono_tgt):
        """L_sup + L_mono evaluated in one tape (reporting/testing only)."""
        with ad.Tape():
            sup, _ = sequence_loss(self.store, self.mcfg, sup_src, sup_tgt,
                                   self.tcfg.label_smoothing)
            mono, _ = sequence_loss(self.store, self.mcfg, mono_tgt,
                                    mono_tgt, self.tcfg.label_smoothing)
            full = ad.add(sup, mono)
        return float(full.data), float(sup.data), float(mono.data)


def _batches(seqs_src, seqs_tgt, order, batch_size, weights=None):
    for lo in range(0, len(order), batch_size):
        idx = order[lo:lo + batch_size]
        yield (pad_batch([seqs_src[i] for i in idx]),
               pad_batch([seqs_tgt[i] for i in idx]),
               None if weights is None else [weights[i] for i in idx])


@dataclass
class TrainResult:
    best_values: dict
    best_metric: float
    best_epoch: int
    log: list = field(default_factory=list)
    stopped_early: bool = False
    wall_seconds: float = 0.0


def evaluate_dev(store, mcfg, tok, dev_srcs, dev_golds, metric="em",
                 max_len=None):
    """Greedy-decode the dev set and score it (exact match or BLEU)."""
    from .evaluation import corpus_bleu, exact_match
    if max_len is None:
        max_len = mcfg.max_positions - 2
    preds = []
    for lo in range(0, len(dev_srcs), 128):
        batch = pad_batch(dev_srcs[lo:lo + 128])
        for ids in batched_greedy(store, mcfg, batch, max_len):
            preds.append(tok.decode(ids))
    if metric == "bleu":
        return corpus_bleu(preds, dev_golds) / 100.0, preds
    em = sum(exact_match(p, g) for p, g in zip(preds, dev_golds))
    return em / max(1, len(dev_golds)), preds


def run_training(model_config, train_config, split, tok, log_path=None):
    """Train one model per the configured mode; returns the best shadow.

    Early stopping tracks the dev metric on Polyak-averaged parameters;
    the best-epoch shadow is what lands in the checkpoint.
    """
    tcfg = train_config

    def enc(text):
        return clip_ids(tok.encode(text), model_config.max_positions)

    sup_src = [enc(e.source_text) for e in split.labeled]
    sup_tgt = [enc(e.target_code) for e in split.labeled]
    sup_wts = None
    if tcfg.synthetic_weight != 1.0 and any(e.synthetic
                                            for e in split.labeled):
        sup_wts = [tcfg.synthetic_weight if e.synthetic else 1.0
                   for e in split.labeled]
    mono_tgt = [enc(m.target_code) for m in split.monolingual]
    dev_src = [enc(e.source_text) for e in split.dev]
    dev_gold = [" ".join(e.target_code.split()) for e in split.dev]

    mono_src = None
    if tcfg.mode == "dummy-source":
        dummies = attach_dummy_sources(split.monolingual, tcfg.seed,
                                       tcfg.dummy_source_max_len)
        mono_src = [enc(d.source_text) for d in dummies]

    use_mono = tcfg.mode in ("tae", "tae-nofreeze", "dummy-source")
    if use_mono and not mono_tgt:
        raise ValueError(f"mode {tcfg.mode!r} requires monolingual data")

    ts = TrainState(model_config, tcfg)
    rng_mono = substream(tcfg.seed, "mono-order")

    def mono_batch_iter():
        while True:
            order = rng_mono.permutation(len(mono_tgt))
            for lo in range(0, len(order), tcfg.batch_size):
                idx = order[lo:lo + tcfg.batch_size]
                tgt = pad_batch([mono_tgt[i] for i in idx])
                if mono_src is None:
                    yield tgt, None
                else:
                    yield tgt, pad_batch([mono_src[i] for i in idx])

    mono_iter = mono_batch_iter() if use_mono and tcfg.mixing_ratio > 0 \
        else None

    best = TrainResult(best_values=ts.polyak.snapshot(), best_metric=-1.0,
                       best_epoch=-1)
    log_f = open(log_path, "w", encoding="utf-8") if log_path else None
    start = time.time()
    epochs_since_best = 0
    try:
        for epoch in range(tcfg.max_epochs):
            order = ts.rng_order.permutation(len(sup_src))
            sup_losses, mono_losses = [], []
            mono_owed = 0.0
            for src_b, tgt_b, wts_b in _batches(sup_src, sup_tgt, order,
                                                tcfg.batch_size, sup_wts):
                sup_losses.append(ts.supervised_step(src_b, tgt_b, wts_b))
                if mono_iter is not None:
                    mono_owed += tcfg.mixing_ratio
                    while mono_owed >= 1.0:
                        tgt_m, src_m = next(mono_iter)
                        mono_losses.append(ts.tae_step(tgt_m, src_m))
                        mono_owed -= 1.0
            metric = _shadow_eval(ts, tok, dev_src, dev_gold)
            is_best = metric > best.best_metric
            if is_best:
                best.best_values = ts.polyak.snapshot()
                best.best_metric = metric
                best.best_epoch = epoch
                epochs_since_best = 0
            else:
                epochs_since_best += 1
            rec = {"epoch": epoch,
                   "sup_loss": round(float(np.mean(sup_losses)), 6),
                   "mono_loss": round(float(np.mean(mono_losses)), 6)
                   if mono_losses else None,
                   "dev_metric": round(metric, 6),
                   "is_best": is_best}
            best.log.append(rec)
            if log_f:
                log_f.write(json.dumps(rec) + "\n")
                log_f.flush()
            if epochs_since_best >= tcfg.patience:
                best.stopped_early = True
                break
    finally:
        if log_f:
            log_f.close()
    best.wall_seconds = time.time() - start
    return ts, best


def _shadow_eval(ts, tok, dev_src, dev_gold):
    with swapped_params(ts.store, ts.polyak.shadow):
        metric, preds = evaluate_dev(ts.store, ts.mcfg, tok, dev_src,
                                     dev_gold, ts.tcfg.dev_metric)
    return metric
