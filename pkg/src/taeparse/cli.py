"""Command-line pipeline with reproducible, manifested runs.

Subcommands: gen-toy-data, train, decode, eval, backtranslate,
fuse-sweep, compare. Configuration precedence is flags > config file >
defaults; environment variables are never consulted. Every run writes a
manifest (resolved config, seed, paths, input digests, version) to the
out dir before any work starts.

Exit codes: 0 success, 2 usage/unknown flag, 3 missing input file,
4 config conflict.
"""

import argparse
import hashlib
import json
import os
import sys
import time

from . import __version__
from .backtranslation import backtranslation_pipeline
from .corpus import CorpusSplit, load_corpus, save_corpus
from .decoding import batched_greedy, beam_search
from .evaluation import (copy_generation_accuracy, corpus_bleu, exact_match,
                         format_comparison)
from .experiment import (EXPERIMENT_MODEL, EXPERIMENT_TRAIN,
                         build_experiment_data, compare_modes)
from .fusion import format_sweep, fusion_sweep
from .lm import LMConfig, train_lm
from .model import ModelConfig, build_model, make_step_fn
from .params import load_checkpoint, save_checkpoint
from .tokenizer import SubwordModel, train_subword
from .toydata import generate_toy_dataset
from .trainer import TrainConfig, clip_ids, pad_batch, run_training

EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_CONFIG_CONFLICT = 4


class UsageError(Exception):
    pass


class MissingInput(Exception):
    pass


class ConfigConflict(Exception):
    pass


def _num(text):
    """int when possible, else float (config-file friendly)."""
    try:
        return int(text)
    except ValueError:
        return float(text)


# dest -> (converter, default, help); None default means optional input
_MODEL_FLAGS = {
    "d_model": (int, 128, "model width"),
    "n_heads": (int, 4, "attention heads"),
    "encoder_layers": (int, 2, "encoder depth"),
    "decoder_layers": (int, 4, "decoder depth"),
    "d_ff": (int, 256, "feed-forward width"),
    "dropout": (float, 0.1, "dropout probability"),
    "max_positions": (int, 64, "maximum sequence length"),
}

_TRAIN_FLAGS = {
    "mode": (str, "baseline",
             "baseline|tae|tae-nofreeze|dummy-source|backtranslation"),
    "seed": (int, 0, "master seed for all substreams"),
    "encoder_lr": (float, 1e-5, "encoder learning rate"),
    "decoder_lr": (float, 7.5e-5, "decoder/embedding learning rate"),
    "label_smoothing": (float, 0.1, "smoothing mass"),
    "polyak_momentum": (float, 0.999, "parameter-average momentum"),
    "batch_size": (int, 32, "examples per step"),
    "mixing_ratio": (float, 2.0, "monolingual batches per supervised batch"),
    "patience": (int, 10, "early-stop patience in epochs"),
    "max_epochs": (int, 40, "epoch cap"),
    "embedding_routing": (str, "decoder-side",
                          "decoder-side|frozen on the mono branch"),
    "dummy_source_max_len": (int, 8, "dummy source length bound"),
    "synthetic_weight": (float, 1.0, "loss weight for synthetic bitext"),
}

_COMMON_IO = {
    "out_dir": (str, None, "artifact directory (required)"),
    "config": (str, None, "flat key = value config file"),
}

_COMMANDS = {}

_FLAG_SPECS = {
    "gen-toy-data": {
        **_COMMON_IO,
        "seed": (int, 0, "corpus seed"),
        "n_bitext": (int, 200, "labeled pairs"),
        "n_mono": (int, 2000, "monolingual programs"),
        "n_dev": (int, 100, "dev pairs"),
        "n_test": (int, 100, "test pairs"),
        "vocab_size": (int, 140, "subword vocabulary size"),
    },
    "train": {
        **_COMMON_IO,
        "bitext": (str, None, "labeled jsonl (required)"),
        "mono": (str, None, "monolingual jsonl"),
        "dev": (str, None, "dev jsonl (required)"),
        "vocab": (str, None, "subword vocab file (required)"),
        **_MODEL_FLAGS,
        **_TRAIN_FLAGS,
    },
    "decode": {
        **_COMMON_IO,
        "checkpoint": (str, None, "model checkpoint (required)"),
        "vocab": (str, None, "subword vocab file (required)"),
        "input": (str, None, "jsonl with source fields (required)"),
        "beam_size": (int, 10, "beam width"),
        "alpha": (float, 0.6, "length-normalization strength"),
        "max_len": (int, 0, "decode length cap (0 = model limit)"),
    },
    "eval": {
        **_COMMON_IO,
        "checkpoint": (str, None, "model checkpoint (required)"),
        "vocab": (str, None, "subword vocab file (required)"),
        "data": (str, None, "parallel jsonl with gold targets (required)"),
        "beam_size": (int, 1, "beam width (1 = greedy)"),
        "alpha": (float, 0.6, "length-normalization strength"),
        "max_len": (int, 0, "decode length cap (0 = model limit)"),
    },
    "backtranslate": {
        **_COMMON_IO,
        "bitext": (str, None, "labeled jsonl (required)"),
        "mono": (str, None, "monolingual jsonl (required)"),
        "dev": (str, None, "dev jsonl (required)"),
        "vocab": (str, None, "subword vocab file (required)"),
        **_MODEL_FLAGS,
        **{k: v for k, v in _TRAIN_FLAGS.items() if k != "mode"},
    },
    "fuse-sweep": {
        **_COMMON_IO,
        "checkpoint": (str, None, "model checkpoint (required)"),
        "vocab": (str, None, "subword vocab file (required)"),
        "dev": (str, None, "parallel jsonl to sweep on (required)"),
        "mono": (str, None, "programs for LM training (required)"),
        "lambdas": (str, "0,0.1,0.3", "comma-separated LM weights"),
        "taus": (str, "1,2", "comma-separated LM temperatures"),
        "beam_size": (int, 1, "beam width (1 = greedy)"),
        "alpha": (float, 0.6, "length-normalization strength"),
        "max_len": (int, 0, "decode length cap (0 = model limit)"),
        "lm_d_model": (int, 64, "LM width"),
        "lm_layers": (int, 2, "LM depth"),
        "lm_heads": (int, 4, "LM attention heads"),
        "lm_d_ff": (int, 128, "LM feed-forward width"),
        "lm_epochs": (int, 10, "LM training epochs"),
        "lm_lr": (float, 1e-3, "LM learning rate"),
        "lm_seed": (int, 0, "LM seed"),
    },
    "compare": {
        **_COMMON_IO,
        "modes": (str, "baseline,tae", "comma-separated train modes"),
        "seeds": (str, "5", "seed count N (0..N-1) or comma list"),
        "corpus_seed": (int, 0, "toy corpus seed"),
        "n_bitext": (int, 200, "labeled pairs"),
        "n_mono": (int, 2000, "monolingual programs"),
        "n_dev": (int, 100, "dev pairs"),
        "n_test": (int, 100, "test pairs"),
        "vocab_size": (int, 140, "subword vocabulary size"),
        "metric": (str, "exact_match", "aggregation metric"),
        **{k: (v[0], EXPERIMENT_MODEL.get(k, v[1]), v[2])
           for k, v in _MODEL_FLAGS.items()},
        **{k: (v[0], EXPERIMENT_TRAIN.get(k, v[1]), v[2])
           for k, v in _TRAIN_FLAGS.items() if k not in ("mode", "seed")},
    },
}

_REQUIRED = {
    "gen-toy-data": ("out_dir",),
    "train": ("out_dir", "bitext", "dev", "vocab"),
    "decode": ("out_dir", "checkpoint", "vocab", "input"),
    "eval": ("out_dir", "checkpoint", "vocab", "data"),
    "backtranslate": ("out_dir", "bitext", "mono", "dev", "vocab"),
    "fuse-sweep": ("out_dir", "checkpoint", "vocab", "dev", "mono"),
    "compare": ("out_dir",),
}

_INPUT_KEYS = ("bitext", "mono", "dev", "vocab", "checkpoint", "input",
               "data", "config")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="taeparse",
        description="copy-attention seq2seq parser with target autoencoding")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)
    for cmd, spec in _FLAG_SPECS.items():
        sub = subs.add_parser(cmd, argument_default=argparse.SUPPRESS)
        for dest, (conv, _default, help_text) in spec.items():
            sub.add_argument("--" + dest.replace("_", "-"), dest=dest,
                             type=conv, help=help_text)
    return parser


def _read_config_file(path, spec):
    if not os.path.exists(path):
        raise MissingInput(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigConflict(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in spec:
                raise ConfigConflict(f"{path}:{lineno}: unknown key {key!r}")
            conv = spec[key][0]
            try:
                values[key] = conv(raw.strip())
            except ValueError as exc:
                raise ConfigConflict(f"{path}:{lineno}: {exc}") from None
    return values


def resolve_config(command, args):
    """defaults <- config file <- explicit flags."""
    spec = _FLAG_SPECS[command]
    merged = {dest: default for dest, (_c, default, _h) in spec.items()}
    given = {k: v for k, v in vars(args).items() if k != "command"}
    if "config" in given:
        merged.update(_read_config_file(given["config"], spec))
        merged["config"] = given["config"]
    merged.update(given)
    for dest in _REQUIRED[command]:
        if merged.get(dest) is None:
            raise UsageError(f"--{dest.replace('_', '-')} is required")
    return merged


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _check_inputs(cfg):
    for key in _INPUT_KEYS:
        path = cfg.get(key)
        if path is not None and not os.path.exists(path):
            raise MissingInput(f"--{key.replace('_', '-')}: "
                               f"no such file: {path}")


def write_manifest(command, cfg):
    """Resolved config, inputs, digests, and version; written up front."""
    os.makedirs(cfg["out_dir"], exist_ok=True)
    inputs = {k: cfg[k] for k in _INPUT_KEYS if cfg.get(k) is not None}
    manifest = {
        "command": command,
        "version": __version__,
        "created_unix": time.time(),
        "seed": cfg.get("seed", cfg.get("corpus_seed")),
        "resolved_config": {k: v for k, v in cfg.items() if k != "config"},
        "inputs": inputs,
        "input_digests": {k: _sha256_file(v) for k, v in inputs.items()},
        "out_dir": cfg["out_dir"],
    }
    path = os.path.join(cfg["out_dir"], "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest


def _out(cfg, name):
    return os.path.join(cfg["out_dir"], name)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def _command(name):
    def register(fn):
        _COMMANDS[name] = fn
        return fn
    return register


@_command("gen-toy-data")
def cmd_gen_toy_data(cfg):
    write_manifest("gen-toy-data", cfg)
    split = generate_toy_dataset(seed=cfg["seed"], n_bitext=cfg["n_bitext"],
                                 n_mono=cfg["n_mono"], n_dev=cfg["n_dev"],
                                 n_test=cfg["n_test"])
    texts = [e.source_text for e in split.labeled]
    texts += [e.target_code for e in split.labeled]
    texts += [m.target_code for m in split.monolingual]
    tok = train_subword(texts, vocab_size=cfg["vocab_size"])
    save_corpus(_out(cfg, "bitext.jsonl"), split.labeled)
    save_corpus(_out(cfg, "mono.jsonl"), split.monolingual)
    save_corpus(_out(cfg, "dev.jsonl"), split.dev)
    save_corpus(_out(cfg, "test.jsonl"), split.test)
    tok.save(_out(cfg, "vocab.txt"))
    print(f"wrote {cfg['n_bitext']} bitext / {cfg['n_mono']} mono / "
          f"{cfg['n_dev']} dev / {cfg['n_test']} test to {cfg['out_dir']}")
    return 0


def _split_from_files(cfg, need_mono):
    mono = []
    if cfg.get("mono") is not None:
        mono = load_corpus(cfg["mono"], "monolingual")
    elif need_mono:
        raise ConfigConflict(
            f"mode {cfg.get('mode', 'backtranslate')!r} needs --mono")
    return CorpusSplit(labeled=load_corpus(cfg["bitext"], "parallel"),
                       monolingual=mono,
                       dev=load_corpus(cfg["dev"], "parallel"),
                       test=[])


def _model_config(cfg, vocab_size):
    return ModelConfig(vocab_size=vocab_size,
                       **{k: cfg[k] for k in _MODEL_FLAGS})


def _train_config(cfg, mode=None):
    kwargs = {k: cfg[k] for k in _TRAIN_FLAGS if k in cfg}
    if mode is not None:
        kwargs["mode"] = mode
    return TrainConfig(**kwargs)


def _finish_training(cfg, tok, mcfg, tcfg, ts, result):
    ts.store.load_values(result.best_values)
    save_checkpoint(_out(cfg, "model.ckpt"), ts.store,
                    {"model": mcfg.to_dict(), "train": tcfg.to_dict(),
                     "version": __version__})
    _write_json(_out(cfg, "report.json"),
                {"mode": tcfg.mode, "seed": tcfg.seed,
                 "best_epoch": result.best_epoch,
                 "best_dev_metric": result.best_metric,
                 "stopped_early": result.stopped_early,
                 "epochs_run": len(result.log),
                 "log": result.log})
    _write_json(_out(cfg, "timing.json"),
                {"wall_seconds": result.wall_seconds})
    print(f"best dev metric {result.best_metric:.4f} at epoch "
          f"{result.best_epoch}; artifacts in {cfg['out_dir']}")


@_command("train")
def cmd_train(cfg):
    mode = cfg["mode"]
    need_mono = mode in ("tae", "tae-nofreeze", "dummy-source",
                         "backtranslation")
    if need_mono and cfg.get("mono") is None:
        raise ConfigConflict(f"mode {mode!r} needs --mono")
    _check_inputs(cfg)
    write_manifest("train", cfg)
    split = _split_from_files(cfg, need_mono)
    tok = SubwordModel.load(cfg["vocab"])
    mcfg = _model_config(cfg, tok.vocab_size)
    tcfg = _train_config(cfg)
    log_path = _out(cfg, "train_log.jsonl")
    if mode == "backtranslation":
        ts, result, synthetic = backtranslation_pipeline(
            mcfg, tcfg, split, tok)
        save_corpus(_out(cfg, "synthetic.jsonl"), synthetic)
    else:
        ts, result = run_training(mcfg, tcfg, split, tok, log_path=log_path)
    _finish_training(cfg, tok, mcfg, tcfg, ts, result)
    return 0


@_command("backtranslate")
def cmd_backtranslate(cfg):
    _check_inputs(cfg)
    write_manifest("backtranslate", cfg)
    split = _split_from_files(cfg, need_mono=True)
    tok = SubwordModel.load(cfg["vocab"])
    mcfg = _model_config(cfg, tok.vocab_size)
    tcfg = _train_config(cfg, mode="backtranslation")
    ts, result, synthetic = backtranslation_pipeline(mcfg, tcfg, split, tok)
    save_corpus(_out(cfg, "synthetic.jsonl"), synthetic)
    _finish_training(cfg, tok, mcfg, tcfg, ts, result)
    return 0


def _load_model(cfg):
    values, partitions, meta = load_checkpoint(cfg["checkpoint"])
    tok = SubwordModel.load(cfg["vocab"])
    mcfg = ModelConfig.from_dict(meta["model"])
    if mcfg.vocab_size != tok.vocab_size:
        raise ConfigConflict(
            f"checkpoint vocab {mcfg.vocab_size} != --vocab "
            f"{tok.vocab_size}")
    store = build_model(mcfg, seed=0)
    store.load_values(values)
    return store, mcfg, tok


def _decode_limit(cfg, mcfg):
    return cfg["max_len"] if cfg["max_len"] > 0 else mcfg.max_positions - 2


def _encode_source(tok, mcfg, text):
    return clip_ids(tok.encode(text), mcfg.max_positions)


@_command("decode")
def cmd_decode(cfg):
    _check_inputs(cfg)
    write_manifest("decode", cfg)
    store, mcfg, tok = _load_model(cfg)
    try:
        examples = load_corpus(cfg["input"], "parallel")
        sources = [e.source_text for e in examples]
    except ValueError:
        sources = [m.target_code
                   for m in load_corpus(cfg["input"], "monolingual")]
    max_len = _decode_limit(cfg, mcfg)
    with open(_out(cfg, "decodes.jsonl"), "w", encoding="utf-8") as f:
        for i, text in enumerate(sources):
            src = _encode_source(tok, mcfg, text)
            hyps = beam_search(make_step_fn(store, mcfg, src),
                               beam_size=cfg["beam_size"],
                               alpha=cfg["alpha"], max_len=max_len)
            best = hyps[0]
            f.write(json.dumps({"id": i,
                                "prediction": tok.decode(best.ids),
                                "raw": best.raw,
                                "normalized": best.normalized,
                                "finished": best.finished}) + "\n")
    print(f"decoded {len(sources)} inputs -> {_out(cfg, 'decodes.jsonl')}")
    return 0


@_command("eval")
def cmd_eval(cfg):
    _check_inputs(cfg)
    write_manifest("eval", cfg)
    store, mcfg, tok = _load_model(cfg)
    examples = load_corpus(cfg["data"], "parallel")
    golds = [" ".join(e.target_code.split()) for e in examples]
    sources = [e.source_text for e in examples]
    max_len = _decode_limit(cfg, mcfg)
    preds = []
    if cfg["beam_size"] == 1:
        for lo in range(0, len(examples), 128):
            batch = pad_batch([_encode_source(tok, mcfg, s)
                               for s in sources[lo:lo + 128]])
            preds += [tok.decode(ids)
                      for ids in batched_greedy(store, mcfg, batch, max_len)]
    else:
        for text in sources:
            hyps = beam_search(make_step_fn(store, mcfg,
                                            _encode_source(tok, mcfg, text)),
                               beam_size=cfg["beam_size"],
                               alpha=cfg["alpha"], max_len=max_len)
            preds.append(tok.decode(hyps[0].ids))
    cg = [copy_generation_accuracy(s, p, g)
          for s, p, g in zip(sources, preds, golds)]
    n = max(1, len(examples))
    report = {
        "n": len(examples),
        "exact_match": sum(exact_match(p, g)
                           for p, g in zip(preds, golds)) / n,
        "bleu": corpus_bleu(preds, golds),
        "copy_accuracy": sum(c for c, _ in cg) / n,
        "generation_accuracy": sum(g for _, g in cg) / n,
        "beam_size": cfg["beam_size"],
    }
    _write_json(_out(cfg, "eval.json"), report)
    lines = [f"{k:<22}{v:>10.4f}" for k, v in report.items()
             if k not in ("n", "beam_size")]
    table = "\n".join([f"n={report['n']} beam={report['beam_size']}"]
                      + lines)
    with open(_out(cfg, "eval.txt"), "w", encoding="utf-8") as f:
        f.write(table + "\n")
    print(table)
    return 0


@_command("fuse-sweep")
def cmd_fuse_sweep(cfg):
    _check_inputs(cfg)
    write_manifest("fuse-sweep", cfg)
    store, mcfg, tok = _load_model(cfg)
    dev = load_corpus(cfg["dev"], "parallel")
    mono = load_corpus(cfg["mono"], "monolingual")
    lm_cfg = LMConfig(vocab_size=tok.vocab_size, d_model=cfg["lm_d_model"],
                      n_heads=cfg["lm_heads"], layers=cfg["lm_layers"],
                      d_ff=cfg["lm_d_ff"],
                      max_positions=mcfg.max_positions)
    lm_store, history = train_lm([tok.encode(m.target_code) for m in mono],
                                 lm_cfg, seed=cfg["lm_seed"],
                                 lr=cfg["lm_lr"], epochs=cfg["lm_epochs"])
    save_checkpoint(_out(cfg, "lm.ckpt"), lm_store,
                    {"lm": lm_cfg.to_dict(), "version": __version__})
    lambdas = [float(x) for x in str(cfg["lambdas"]).split(",")]
    taus = [float(x) for x in str(cfg["taus"]).split(",")]
    rows = fusion_sweep(store, mcfg, lm_store, lm_cfg, tok,
                        [_encode_source(tok, mcfg, e.source_text) for e in dev],
                        [" ".join(e.target_code.split()) for e in dev],
                        lambdas, taus, beam_size=cfg["beam_size"],
                        alpha=cfg["alpha"],
                        max_len=_decode_limit(cfg, mcfg))
    table = format_sweep(rows)
    with open(_out(cfg, "sweep.tsv"), "w", encoding="utf-8") as f:
        f.write(table + "\n")
    _write_json(_out(cfg, "lm_history.json"), history)
    print(table)
    return 0


def _parse_seeds(text):
    text = str(text)
    if "," in text:
        return [int(x) for x in text.split(",")]
    return list(range(int(text)))


@_command("compare")
def cmd_compare(cfg):
    modes = [m.strip() for m in cfg["modes"].split(",")]
    seeds = _parse_seeds(cfg["seeds"])
    if len(modes) < 2:
        raise ConfigConflict("compare needs at least two --modes")
    _check_inputs(cfg)
    write_manifest("compare", cfg)
    split, tok = build_experiment_data(
        corpus_seed=cfg["corpus_seed"],
        corpus_kwargs={k: cfg[k] for k in ("n_bitext", "n_mono", "n_dev",
                                           "n_test")},
        vocab_size=cfg["vocab_size"])
    model_kwargs = {k: cfg[k] for k in _MODEL_FLAGS}
    train_kwargs = {k: cfg[k] for k in _TRAIN_FLAGS
                    if k in cfg and k not in ("mode", "seed")}
    reports = compare_modes(modes, seeds, split, tok, model_kwargs,
                            train_kwargs, progress=print)
    _write_json(_out(cfg, "comparison.json"),
                {m: r.to_dict() for m, r in reports.items()})
    table = format_comparison(reports[modes[0]], reports[modes[1]],
                              metric=cfg["metric"])
    with open(_out(cfg, "comparison.txt"), "w", encoding="utf-8") as f:
        f.write(table + "\n")
    print(table)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        return _COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except ConfigConflict as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_CONFLICT


if __name__ == "__main__":
    sys.exit(main())
