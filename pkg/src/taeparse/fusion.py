"""Shallow fusion: per-step LM rescoring inside beam or greedy search.

score(y) = log p_TM(y) + lambda * log softmax(lm_logits / tau)[y]

The lambda=0 path is computed, not short-circuited; adding a signed zero
leaves every IEEE float unchanged, so unfused decodes stay byte-identical.
"""

from dataclasses import dataclass

import numpy as np

from .decoding import beam_search, greedy_decode
from .model import make_step_fn
from .lm import make_lm_step_fn
from .tokenizer import BOS, EOS


@dataclass(frozen=True)
class FusionConfig:
    lam: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


def log_softmax(logits, tau=1.0):
    z = logits / tau
    z = z - z.max()
    return (z - np.log(np.exp(z).sum())).astype(logits.dtype)


def fused_logprob(tm_logprob, lm_logits, lam, tau):
    """Per-step fused scores over the vocabulary."""
    tm = np.asarray(tm_logprob)
    lm = np.asarray(lm_logits, dtype=tm.dtype)
    return tm + np.asarray(lam, dtype=tm.dtype) * log_softmax(lm, tau)


def make_fused_step_fn(tm_step_fn, lm_step_fn, lam, tau):
    def step_fn(prefix_ids):
        return fused_logprob(tm_step_fn(prefix_ids), lm_step_fn(prefix_ids),
                             lam, tau)
    return step_fn


def fused_decode(store, mcfg, lm_store, lm_cfg, src_ids, lam, tau,
                 beam_size=1, alpha=0.6, max_len=48):
    """Decode one source with fusion; beam_size=1 falls back to greedy."""
    tm_fn = make_step_fn(store, mcfg, src_ids)
    lm_fn = make_lm_step_fn(lm_store, lm_cfg)
    fn = make_fused_step_fn(tm_fn, lm_fn, lam, tau)
    if beam_size == 1:
        return greedy_decode(fn, max_len, BOS, EOS)
    hyps = beam_search(fn, beam_size=beam_size, alpha=alpha, max_len=max_len)
    return hyps[0].ids


def fusion_sweep(store, mcfg, lm_store, lm_cfg, tok, dev_srcs, dev_golds,
                 lambdas, taus, beam_size=1, alpha=0.6, max_len=48,
                 metric="em"):
    """Grid of (lambda, tau, metric value) rows over the dev set."""
    from .evaluation import corpus_bleu, exact_match
    if not lambdas or not taus:
        raise ValueError("empty sweep grid")
    rows = []
    for lam in lambdas:
        for tau in taus:
            preds = []
            for src in dev_srcs:
                ids = fused_decode(store, mcfg, lm_store, lm_cfg, src,
                                   lam, tau, beam_size, alpha, max_len)
                preds.append(tok.decode(ids))
            if metric == "bleu":
                value = corpus_bleu(preds, dev_golds)
            else:
                value = sum(exact_match(p, g)
                            for p, g in zip(preds, dev_golds)) \
                    / max(1, len(dev_golds))
            rows.append((float(lam), float(tau), value))
    return rows


def format_sweep(rows):
    lines = ["lambda\ttau\tmetric"]
    for lam, tau, value in rows:
        lines.append(f"{lam:g}\t{tau:g}\t{value:.6f}")
    return "\n".join(lines)
