"""Back-translation: backward model, synthetic sources, merged training.

The backward model reuses the forward architecture and tokenizer with
source/target roles swapped and early-stops on dev BLEU of generated
utterances. Synthetic pairs carry synthetic=True through the merge so
reports can separate provenance.
"""

from dataclasses import replace

import numpy as np

from .corpus import CorpusSplit, MonolingualExample, ParallelExample
from .decoding import batched_greedy
from .trainer import clip_ids, pad_batch, run_training


def swap_roles(split):
    """Bitext with utterance and program exchanged; mono becomes sources."""
    def flip(ex):
        return ParallelExample(source_text=ex.target_code,
                               target_code=ex.source_text,
                               synthetic=ex.synthetic)
    return CorpusSplit(labeled=[flip(e) for e in split.labeled],
                       monolingual=[MonolingualExample(e.source_text)
                                    for e in split.labeled],
                       dev=[flip(e) for e in split.dev],
                       test=[flip(e) for e in split.test])


def train_backward(model_config, train_config, split, tok, log_path=None):
    """Code-to-utterance model; best checkpoint by dev BLEU."""
    tcfg = replace(train_config, mode="baseline", dev_metric="bleu")
    return run_training(model_config, tcfg, swap_roles(split), tok,
                        log_path=log_path)


def synthesize_sources(store, model_config, tok, mono, max_len=None,
                       batch_size=128):
    """Greedy-decode one synthetic utterance per program, order kept."""
    if max_len is None:
        max_len = model_config.max_positions - 2
    out = []
    for lo in range(0, len(mono), batch_size):
        chunk = mono[lo:lo + batch_size]
        batch = pad_batch([clip_ids(tok.encode(m.target_code),
                                    model_config.max_positions)
                           for m in chunk])
        for m, ids in zip(chunk, batched_greedy(store, model_config,
                                                batch, max_len)):
            out.append(ParallelExample(source_text=tok.decode(ids),
                                       target_code=m.target_code,
                                       synthetic=True))
    return out


def merge_and_train(model_config, train_config, split, synthetic, tok,
                    log_path=None):
    """Forward training on bitext plus synthetic pairs.

    With an empty synthetic list the trajectory is bit-identical to
    baseline training at the same seed.
    """
    for ex in synthetic:
        if not ex.synthetic:
            raise ValueError("synthetic example missing provenance flag")
    merged = CorpusSplit(labeled=list(split.labeled) + list(synthetic),
                         monolingual=split.monolingual,
                         dev=split.dev, test=split.test)
    return run_training(model_config, train_config, merged, tok,
                        log_path=log_path)


def backtranslation_pipeline(model_config, train_config, split, tok,
                             backward_config=None, out_dir=None):
    """train_backward -> synthesize -> merge_and_train; returns the
    forward (ts, result) plus the synthetic pairs."""
    bcfg = backward_config if backward_config is not None else train_config
    back_ts, back_res = train_backward(model_config, bcfg, split, tok)
    back_ts.store.load_values(back_res.best_values)
    synthetic = synthesize_sources(back_ts.store, model_config, tok,
                                   split.monolingual)
    fwd_cfg = replace(train_config, mode="backtranslation")
    ts, res = merge_and_train(model_config, fwd_cfg, split, synthetic, tok)
    return ts, res, synthetic
