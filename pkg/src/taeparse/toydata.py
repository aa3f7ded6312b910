"""Deterministic toy corpus: templated NL commands paired with small programs.

Each program mixes identifiers copied verbatim from the command with
keywords and punctuation that never appear in it, so both the copy path and
the generation path of the model are exercised. All splits are disjoint on
target_code.
"""

from .corpus import CorpusSplit, MonolingualExample, ParallelExample
from .rng import substream

IDENTIFIERS = (
    "count", "total", "index", "name", "items", "cache", "flag", "buffer",
    "size", "depth", "width", "height", "color", "status", "score", "level",
    "rank", "speed", "angle", "offset", "limit", "weight", "price", "title",
    "label", "owner", "parent", "child", "queue", "stack", "state", "mode",
    "path", "key", "token", "target", "source", "result", "value", "data",
    "node", "edge", "graph", "entry", "record", "field", "shape", "batch",
    "cursor", "margin",
)

# (NL template, code template, number of identifier slots)
TEMPLATES = (
    ("get the {0}",
     "def get ( self ) : return self . {0}", 1),
    ("set the {0} to {1}",
     "def set ( self , {1} ) : self . {0} = {1}", 2),
    ("check if the {0} is empty",
     "def check ( self ) : return len ( self . {0} ) == 0", 1),
    ("add {1} to the {0}",
     "def add ( self , {1} ) : self . {0} . append ( {1} )", 2),
    ("remove {1} from the {0}",
     "def remove ( self , {1} ) : self . {0} . remove ( {1} )", 2),
    ("count the {0}",
     "def count ( self ) : return len ( self . {0} )", 1),
    ("increase the {0} by {1}",
     "def increase ( self , {1} ) : self . {0} += {1}", 2),
    ("reset the {0}",
     "def reset ( self ) : self . {0} = None", 1),
    ("return true if the {0} equals {1}",
     "def equals ( self , {1} ) : return self . {0} == {1}", 2),
    ("print the {0}",
     "def show ( self ) : print ( self . {0} )", 1),
)

KEYWORD_TOKENS = frozenset(
    "def get set check add remove count increase reset equals show print"
    " append self return len None ( ) : , . = == += 0".split())


def _sample_example(rng):
    t = int(rng.integers(0, len(TEMPLATES)))
    nl, code, slots = TEMPLATES[t]
    first = int(rng.integers(0, len(IDENTIFIERS)))
    names = [IDENTIFIERS[first]]
    if slots == 2:
        second = int(rng.integers(0, len(IDENTIFIERS) - 1))
        if second >= first:
            second += 1
        names.append(IDENTIFIERS[second])
    return ParallelExample(nl.format(*names), code.format(*names))


def generate_toy_dataset(seed, n_bitext, n_mono, n_dev, n_test):
    """Deterministic corpus with splits pairwise disjoint on target_code."""
    total = n_bitext + n_mono + n_dev + n_test
    rng = substream(seed, "toy-corpus")
    seen = set()
    pool = []
    while len(pool) < total:
        ex = _sample_example(rng)
        if ex.target_code in seen:
            continue
        seen.add(ex.target_code)
        pool.append(ex)
    labeled = pool[:n_bitext]
    mono = [MonolingualExample(ex.target_code)
            for ex in pool[n_bitext:n_bitext + n_mono]]
    dev = pool[n_bitext + n_mono:n_bitext + n_mono + n_dev]
    test = pool[n_bitext + n_mono + n_dev:]
    return CorpusSplit(labeled, mono, dev, test)


def toy_grammar_accepts(code):
    """Membership oracle: does `code` instantiate some template?

    Repeated occurrences of one slot must bind the same identifier, and
    two-slot templates require distinct identifiers (matching generation).
    """
    tokens = code.split()
    for _, tmpl, slots in TEMPLATES:
        markers = [f"\x00{i}" for i in range(slots)]
        pattern = tmpl.format(*markers).split()
        if len(pattern) != len(tokens):
            continue
        binding = {}
        ok = True
        for p, tok in zip(pattern, tokens):
            if p in markers:
                if tok not in IDENTIFIERS:
                    ok = False
                    break
                if binding.setdefault(p, tok) != tok:
                    ok = False
                    break
            elif p != tok:
                ok = False
                break
        if ok and len(set(binding.values())) == len(binding):
            return True
    return False
