"""Multi-seed mode comparison on the toy corpus.

One fixed corpus draw, several training seeds per mode, greedy test-set
decoding of each best checkpoint, and Welch-style aggregation. This is
the engine behind the `compare` subcommand and the scaled end-to-end
experiment: small model, equal learning rates, and a faster parameter
average than the full-scale defaults, all calibrated for single-CPU runs.
"""

import time

from .evaluation import EvalReport
from .model import ModelConfig
from .toydata import generate_toy_dataset
from .tokenizer import train_subword
from .trainer import TrainConfig, evaluate_dev, run_training

EXPERIMENT_CORPUS = dict(n_bitext=200, n_mono=2000, n_dev=100, n_test=100)
EXPERIMENT_VOCAB = 140

EXPERIMENT_MODEL = dict(d_model=64, n_heads=4, encoder_layers=2,
                        decoder_layers=2, d_ff=128, dropout=0.1,
                        max_positions=64)

EXPERIMENT_TRAIN = dict(encoder_lr=2e-3, decoder_lr=1e-3, batch_size=32,
                        mixing_ratio=2.0, polyak_momentum=0.98,
                        max_epochs=60, patience=60)


def build_experiment_data(corpus_seed=0, corpus_kwargs=None,
                          vocab_size=EXPERIMENT_VOCAB):
    """Toy corpus and its subword model (trained on bitext + mono)."""
    kwargs = dict(EXPERIMENT_CORPUS)
    if corpus_kwargs:
        kwargs.update(corpus_kwargs)
    split = generate_toy_dataset(seed=corpus_seed, **kwargs)
    texts = [e.source_text for e in split.labeled]
    texts += [e.target_code for e in split.labeled]
    texts += [m.target_code for m in split.monolingual]
    tok = train_subword(texts, vocab_size=vocab_size)
    return split, tok


def run_mode_seed(mode, seed, split, tok, model_kwargs=None,
                  train_kwargs=None, log_path=None):
    """One training run; returns test-set predictions and metadata."""
    mk = dict(EXPERIMENT_MODEL)
    if model_kwargs:
        mk.update(model_kwargs)
    tk = dict(EXPERIMENT_TRAIN)
    if train_kwargs:
        tk.update(train_kwargs)
    mcfg = ModelConfig(vocab_size=tok.vocab_size, **mk)
    tcfg = TrainConfig(mode=mode, seed=seed, **tk)
    ts, result = run_training(mcfg, tcfg, split, tok, log_path=log_path)
    ts.store.load_values(result.best_values)
    test_src = [tok.encode(e.source_text) for e in split.test]
    test_gold = [" ".join(e.target_code.split()) for e in split.test]
    _, preds = evaluate_dev(ts.store, mcfg, tok, test_src, test_gold)
    return {"mode": mode, "seed": seed, "preds": preds,
            "golds": test_gold,
            "sources": [e.source_text for e in split.test],
            "dev_metric": result.best_metric,
            "best_epoch": result.best_epoch,
            "wall_seconds": result.wall_seconds,
            "result": result, "state": ts}


def compare_modes(modes, seeds, split, tok, model_kwargs=None,
                  train_kwargs=None, progress=None):
    """EvalReport per mode over the given training seeds."""
    reports = {mode: EvalReport(mode=mode) for mode in modes}
    for mode in modes:
        for seed in seeds:
            t0 = time.time()
            run = run_mode_seed(mode, seed, split, tok, model_kwargs,
                                train_kwargs)
            reports[mode].add_run(seed, run["preds"], run["golds"],
                                  run["sources"])
            if progress is not None:
                progress(f"{mode} seed {seed}: "
                         f"em={reports[mode].exact_match[-1]:.3f} "
                         f"copy={reports[mode].copy_accuracy[-1]:.3f} "
                         f"({time.time() - t0:.0f}s)")
    return reports
