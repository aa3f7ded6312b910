"""Exact match, corpus BLEU, copy/generation accuracies, and aggregation.

The copy/generation split walks the gold tokens in order and moves every
token that can still be matched against the source's token multiset into
the copy list (consuming one source occurrence per match); everything else
is a generation token. Accuracies then require ordered equality of the
corresponding lists from the prediction. Comparison happens on the
lowercased word level after punctuation splitting.
"""

import math
import re
from collections import Counter
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats

_BLEU_EPS = 1e-9
_WORD_SPLIT = re.compile(r"[^\w\s]")


def exact_match(pred, gold):
    """1 iff whitespace-split token sequences are identical."""
    return 1 if pred.split() == gold.split() else 0


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(preds, golds, max_n=4):
    """4-gram corpus BLEU in [0, 100] with brevity penalty.

    Zero counts are handled by adding a small epsilon to every modified
    precision's numerator and denominator.
    """
    if len(preds) != len(golds):
        raise ValueError("prediction/reference length mismatch")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for pred, gold in zip(preds, golds):
        p_toks, g_toks = pred.split(), gold.split()
        cand_len += len(p_toks)
        ref_len += len(g_toks)
        for n in range(1, max_n + 1):
            pc = _ngrams(p_toks, n)
            gc = _ngrams(g_toks, n)
            matches[n - 1] += sum(min(c, gc[g]) for g, c in pc.items())
            totals[n - 1] += max(0, len(p_toks) - n + 1)
    if cand_len == 0:
        return 0.0
    log_precision = sum(
        math.log((m + _BLEU_EPS) / (t + _BLEU_EPS))
        for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_precision)


def word_tokens(text):
    """Lowercase word-level tokens with punctuation split out."""
    return _WORD_SPLIT.sub(lambda m: f" {m.group(0)} ", text.lower()).split()


def split_copy_generation(source, gold):
    """Partition gold tokens into (copyable, generated), both in gold order."""
    available = Counter(word_tokens(source))
    copy_list, gen_list = [], []
    for tok in word_tokens(gold):
        if available[tok] > 0:
            available[tok] -= 1
            copy_list.append(tok)
        else:
            gen_list.append(tok)
    return copy_list, gen_list


def copy_generation_accuracy(source, pred, gold):
    """(copy bit, generation bit): ordered equality of the split lists."""
    gold_copy, gold_gen = split_copy_generation(source, gold)
    pred_copy, pred_gen = split_copy_generation(source, pred)
    return int(pred_copy == gold_copy), int(pred_gen == gold_gen)


def aggregate_and_test(runs_a, runs_b=None):
    """Means/stds (n-1) and a one-tailed Welch p-value for mean_a > mean_b."""
    a = np.asarray(runs_a, dtype=np.float64)
    mean_a = float(a.mean())
    std_a = float(a.std(ddof=1)) if a.size > 1 else None
    if runs_b is None:
        return mean_a, std_a, None, None, None
    b = np.asarray(runs_b, dtype=np.float64)
    mean_b = float(b.mean())
    std_b = float(b.std(ddof=1)) if b.size > 1 else None
    if a.size < 2 or b.size < 2:
        raise ValueError("need >= 2 runs per side for a p-value")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = a.size, b.size
    denom = va / na + vb / nb
    if denom == 0.0:
        p = 0.5 if mean_a == mean_b else (0.0 if mean_a > mean_b else 1.0)
        return mean_a, std_a, mean_b, std_b, p
    t = (mean_a - mean_b) / math.sqrt(denom)
    dof = denom ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = float(stats.t.sf(t, dof))
    return mean_a, std_a, mean_b, std_b, p


@dataclass
class EvalReport:
    """Per-run metrics plus multi-seed aggregates for one mode."""
    mode: str
    seeds: list = field(default_factory=list)
    exact_match: list = field(default_factory=list)
    bleu: list = field(default_factory=list)
    copy_accuracy: list = field(default_factory=list)
    generation_accuracy: list = field(default_factory=list)

    def add_run(self, seed, preds, golds, sources):
        em = [exact_match(p, g) for p, g in zip(preds, golds)]
        cg = [copy_generation_accuracy(s, p, g)
              for s, p, g in zip(sources, preds, golds)]
        self.seeds.append(seed)
        self.exact_match.append(sum(em) / max(1, len(em)))
        self.bleu.append(corpus_bleu(preds, golds))
        self.copy_accuracy.append(sum(c for c, _ in cg) / max(1, len(cg)))
        self.generation_accuracy.append(sum(g for _, g in cg) / max(1, len(cg)))

    def to_dict(self):
        d = asdict(self)
        for key in ("exact_match", "bleu", "copy_accuracy",
                    "generation_accuracy"):
            vals = d[key]
            if vals:
                mean, std, _, _, _ = aggregate_and_test(vals)
                d[f"{key}_mean"] = mean
                d[f"{key}_std"] = std
        return d


def format_comparison(report_a, report_b, metric="exact_match"):
    """Human-readable two-mode table with the one-tailed p-value."""
    a, b = getattr(report_a, metric), getattr(report_b, metric)
    mean_a, std_a, mean_b, std_b, p = aggregate_and_test(a, b)
    lines = [
        f"{'mode':<14}{'mean':>10}{'std':>10}  per-seed",
        f"{report_a.mode:<14}{mean_a:>10.4f}{(std_a or 0):>10.4f}  "
        + " ".join(f"{v:.4f}" for v in a),
        f"{report_b.mode:<14}{mean_b:>10.4f}{(std_b or 0):>10.4f}  "
        + " ".join(f"{v:.4f}" for v in b),
        f"one-tailed p ({report_a.mode} > {report_b.mode}): {p:.6f}",
    ]
    return "\n".join(lines)
