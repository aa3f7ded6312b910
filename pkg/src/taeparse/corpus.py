"""Corpus records, preprocessing, and low-resource splitting.

Records are one JSON object per line. Parallel records carry `source` and
`target`; monolingual records carry `target` only. String literals in
program text are anonymized to 'str0', 'str1', ... with the originals kept
in an ordered map so the rewrite round-trips exactly.
"""

import json
import re
from dataclasses import dataclass, field

from .rng import substream

_QUOTES = ("'", '"')


@dataclass
class ParallelExample:
    source_text: str
    target_code: str
    anonymization_map: list = field(default_factory=list)
    synthetic: bool = False


@dataclass
class MonolingualExample:
    target_code: str
    anonymization_map: list = field(default_factory=list)


@dataclass
class CorpusSplit:
    labeled: list
    monolingual: list
    dev: list
    test: list


def _parse_record(line, lineno, kind):
    def reject_dupes(pairs):
        d = {}
        for k, v in pairs:
            if k in d:
                raise ValueError(f"line {lineno}: duplicate field {k!r}")
            d[k] = v
        return d

    try:
        rec = json.loads(line, object_pairs_hook=reject_dupes)
    except json.JSONDecodeError as e:
        raise ValueError(f"line {lineno}: malformed record: {e}") from None
    if not isinstance(rec, dict):
        raise ValueError(f"line {lineno}: record must be a JSON object")
    if "target" not in rec:
        raise ValueError(f"line {lineno}: missing required field 'target'")
    str_map = [tuple(p) for p in rec.get("str_map", [])]
    if kind == "parallel":
        if "source" not in rec:
            raise ValueError(f"line {lineno}: missing required field 'source'")
        return ParallelExample(rec["source"], rec["target"], str_map,
                               bool(rec.get("synthetic", False)))
    return MonolingualExample(rec["target"], str_map)


def load_corpus(path, kind):
    """Read records in file order; malformed lines fail loudly."""
    if kind not in ("parallel", "monolingual"):
        raise ValueError(f"unknown corpus kind {kind!r}")
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            out.append(_parse_record(line, lineno, kind))
    return out


def save_corpus(path, examples):
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            rec = {"target": ex.target_code}
            if isinstance(ex, ParallelExample):
                rec = {"source": ex.source_text, "target": ex.target_code}
                if ex.synthetic:
                    rec["synthetic"] = True
            if ex.anonymization_map:
                rec["str_map"] = [list(p) for p in ex.anonymization_map]
            f.write(json.dumps(rec) + "\n")


def anonymize_strings(code):
    """Replace quoted literals left-to-right with 'str0', 'str1', ...

    The map stores the original quoted substring (quotes included) so
    deanonymize restores the exact input. Simple quote-pair scanning, no
    escape handling.
    """
    out = []
    mapping = []
    i = 0
    n = len(code)
    while i < n:
        c = code[i]
        if c in _QUOTES:
            j = code.find(c, i + 1)
            if j < 0:
                raise ValueError(f"unbalanced quote at offset {i}")
            placeholder = f"str{len(mapping)}"
            mapping.append((placeholder, code[i:j + 1]))
            out.append(f"'{placeholder}'")
            i = j + 1
        else:
            out.append(c)
            i += 1
    return "".join(out), mapping


def deanonymize(code, mapping):
    """Exact inverse of anonymize_strings."""
    for placeholder, literal in mapping:
        quoted = f"'{placeholder}'"
        if quoted not in code:
            raise ValueError(f"placeholder {placeholder!r} not present")
        code = code.replace(quoted, literal, 1)
    return code


_CAMEL = re.compile(r"(?<=[a-z])(?=[A-Z])")
_PUNCT = re.compile(r"([^\w\s])")


def normalize_java(code):
    """Newlines to '#', camel-case split, punctuation as standalone tokens."""
    code = code.replace("\n", " # ")
    code = _CAMEL.sub(" ", code)
    code = _PUNCT.sub(r" \1 ", code)
    return " ".join(code.split())


def make_low_resource_split(bitext, fraction, seed):
    """Seeded labeled subset plus the full target side as monolingual data."""
    if not bitext:
        raise ValueError("empty bitext")
    n_labeled = round(fraction * len(bitext))
    if n_labeled < 1:
        raise ValueError(f"fraction {fraction} keeps no labeled example")
    rng = substream(seed, "low-resource-split")
    picks = sorted(rng.permutation(len(bitext))[:n_labeled].tolist())
    labeled = [bitext[i] for i in picks]
    mono = [MonolingualExample(ex.target_code, ex.anonymization_map)
            for ex in bitext]
    return labeled, mono


def attach_dummy_sources(mono, seed, max_len):
    """Pair each program with a zero-token source of random length.

    This is the control condition for the autoencoding objective: the
    source carries no information about the target.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    rng = substream(seed, "dummy-lengths")
    out = []
    for ex in mono:
        length = int(rng.integers(1, max_len + 1))
        source = " ".join(["<zero>"] * length)
        out.append(ParallelExample(source, ex.target_code,
                                   ex.anonymization_map, synthetic=True))
    return out
