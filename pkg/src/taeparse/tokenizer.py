"""Subword vocabulary shared by source utterances and target programs.

Trains byte-pair merges over whitespace-split words; word-internal
continuation pieces carry a "##" prefix and encoding is greedy
longest-match, so segmentation behaves like WordPiece. One model serves
both sides of the bitext.
"""

from collections import Counter

PAD, UNK, BOS, EOS, ZERO = 0, 1, 2, 3, 4
SPECIAL_PIECES = ("<pad>", "<unk>", "<s>", "</s>", "<zero>")

_HEADER = "#taeparse-vocab v1 specials=" + ",".join(SPECIAL_PIECES)


class SubwordModel:
    """Immutable after construction; encode/decode are pure."""

    def __init__(self, pieces):
        if list(pieces[:len(SPECIAL_PIECES)]) != list(SPECIAL_PIECES):
            raise ValueError("piece list must start with the special tokens")
        self.pieces = list(pieces)
        self.piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        if len(self.piece_to_id) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")
        self._max_piece_chars = max(
            len(p) - 2 if p.startswith("##") else len(p) for p in self.pieces)

    @property
    def vocab_size(self):
        return len(self.pieces)

    def encode_word(self, word):
        """Greedy longest-match; an unmatchable character becomes UNK."""
        ids = []
        i = 0
        n = len(word)
        while i < n:
            end = min(n, i + self._max_piece_chars)
            match = None
            for j in range(end, i, -1):
                cand = word[i:j] if i == 0 else "##" + word[i:j]
                pid = self.piece_to_id.get(cand)
                if pid is not None:
                    match = (pid, j)
                    break
            if match is None:
                ids.append(UNK)
                i += 1
            else:
                ids.append(match[0])
                i = match[1]
        return ids

    def encode(self, text, add_bos_eos=True):
        ids = []
        for word in text.split():
            ids.extend(self.encode_word(word))
        if add_bos_eos:
            return [BOS] + ids + [EOS]
        return ids

    def decode(self, ids):
        """Inverse of encode up to whitespace normalization; drops framing."""
        words = []
        for i in ids:
            if i in (PAD, BOS, EOS, ZERO):
                continue
            piece = self.pieces[i]
            if piece.startswith("##") and words:
                words[-1] += piece[2:]
            elif piece.startswith("##"):
                words.append(piece[2:])
            else:
                words.append(piece)
        return " ".join(words)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(_HEADER + "\n")
            for p in self.pieces:
                f.write(p + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if header != _HEADER:
                raise ValueError(f"{path}: unrecognized vocabulary header")
            pieces = [line.rstrip("\n") for line in f]
        return cls(pieces)


def _word_symbols(word):
    return [word[0]] + ["##" + c for c in word[1:]]


def train_subword(texts, vocab_size=1000):
    """BPE merge training; deterministic given input order.

    Ties between equally frequent pairs break lexicographically so two runs
    over the same corpus produce identical vocabularies.
    """
    word_counts = Counter()
    for text in texts:
        word_counts.update(text.split())
    if not word_counts:
        raise ValueError("empty training corpus")

    words = sorted(word_counts)
    counts = [word_counts[w] for w in words]
    seqs = [_word_symbols(w) for w in words]

    alphabet = sorted({s for seq in seqs for s in seq})
    floor = len(SPECIAL_PIECES) + len(alphabet)
    if vocab_size < floor:
        raise ValueError(
            f"vocab_size {vocab_size} below minimum {floor} "
            "(special tokens plus base characters)")

    pieces = list(SPECIAL_PIECES) + alphabet
    piece_set = set(pieces)
    while len(pieces) < vocab_size:
        pair_counts = Counter()
        for seq, c in zip(seqs, counts):
            for a, b in zip(seq, seq[1:]):
                pair_counts[(a, b)] += c
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merged = best[0] + best[1][2:]
        # distinct merges can yield an existing piece string; apply the
        # merge to the sequences but do not duplicate the vocab entry
        if merged not in piece_set:
            pieces.append(merged)
            piece_set.add(merged)
        a, b = best
        for k, seq in enumerate(seqs):
            if a not in seq:
                continue
            out = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == a and seq[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            seqs[k] = out
    return SubwordModel(pieces)
