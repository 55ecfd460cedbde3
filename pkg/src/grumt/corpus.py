"""Parallel-corpus preparation: tokens, vocabularies, id sequences, batches.

Sentences are lowercased and split into words and standalone punctuation.
French elided articles and pronouns (``l'``, ``d'``, ``qu'``...) become
their own tokens with the apostrophe kept. Nothing is stemmed.

Id layout for a vocabulary with ``n`` ranked tokens: ranked tokens take
ids ``0..n-1``, then ``NF`` (not found) is ``n`` and ``EOS`` is ``n+1``.
"""
import os
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

NF = "NF"
EOS = "EOS"

ELISIONS = frozenset({
    "c", "d", "j", "l", "m", "n", "s", "t", "qu",
    "jusqu", "lorsqu", "puisqu", "quoiqu", "presqu", "quelqu",
})
_TOKEN_RE = re.compile(r"\w+(?:['\-]\w+)*|[^\w\s]")
_APOSTROPHES = str.maketrans({"’": "'", "ʼ": "'", "‘": "'"})


class CorpusError(ValueError):
    pass


def tokenize(line):
    out = []
    for tok in _TOKEN_RE.findall(line.lower().translate(_APOSTROPHES)):
        while "'" in tok:
            head, rest = tok.split("'", 1)
            if head not in ELISIONS or not rest:
                break
            out.append(head + "'")
            tok = rest
        out.append(tok)
    return out


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple
    size_limit: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})
        if len(self._index) != len(self.tokens):
            raise CorpusError("vocabulary tokens must be unique")

    @property
    def nf_id(self):
        return len(self.tokens)

    @property
    def eos_id(self):
        return len(self.tokens) + 1

    def __len__(self):
        # total id count, including NF and EOS
        return len(self.tokens) + 2

    def __contains__(self, token):
        return token in self._index

    def id_of(self, token):
        return self._index.get(token, self.nf_id)

    def token_of(self, idx):
        if 0 <= idx < len(self.tokens):
            return self.tokens[idx]
        if idx == self.nf_id:
            return NF
        if idx == self.eos_id:
            return EOS
        raise CorpusError(f"id {idx} outside vocabulary of {len(self)} ids")

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            tokens = tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))
        return cls(tokens, len(tokens))


def build_vocabulary(corpus_lines, size_limit=80000):
    """Keep the ``size_limit`` most frequent tokens; ties go to the
    lexicographically smaller token."""
    if size_limit < 1:
        raise CorpusError("size_limit must be at least 1")
    counts = Counter()
    for line in corpus_lines:
        counts.update(tokenize(line))
    if not counts:
        raise CorpusError("corpus contains no tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tuple(t for t, _ in ranked[:size_limit]), size_limit)


def encode(line, vocab):
    """Token ids for ``line`` with EOS appended; unknown words map to NF."""
    return [vocab.id_of(t) for t in tokenize(line)] + [vocab.eos_id]


def decode(ids, vocab, stop_at_eos=True):
    out = []
    for i in ids:
        i = int(i)
        if stop_at_eos and i == vocab.eos_id:
            break
        out.append(vocab.token_of(i))
    return out


@dataclass
class Batch:
    """Pairs that all share one (source length, target length) shape.

    ``source`` is an int array (B, F), ``target`` is (B, E).
    """

    source: np.ndarray
    target: np.ndarray

    @property
    def source_len(self):
        return self.source.shape[1]

    @property
    def target_len(self):
        return self.target.shape[1]

    @property
    def pairs(self):
        return [(list(s), list(t)) for s, t in zip(self.source.tolist(), self.target.tolist())]

    def __len__(self):
        return self.source.shape[0]


def group_by_shape(pairs, max_len=50):
    """Bucket ``(source_ids, target_ids)`` pairs by exact lengths.

    Pairs longer than ``max_len`` on either side (EOS included) are left
    out. Returns a dict keyed by (F, E) with pairs in input order.
    """
    groups = {}
    for src, tgt in pairs:
        if len(src) > max_len or len(tgt) > max_len:
            continue
        groups.setdefault((len(src), len(tgt)), []).append((src, tgt))
    return groups


def make_batches(pairs, batch_size=128, max_len=50):
    if batch_size < 1:
        raise CorpusError("batch_size must be at least 1")
    groups = group_by_shape(pairs, max_len)
    batches = []
    for key in sorted(groups):
        group = groups[key]
        for start in range(0, len(group) - batch_size + 1, batch_size):
            chunk = group[start:start + batch_size]
            src = np.array([s for s, _ in chunk], dtype=np.int64).reshape(batch_size, key[0])
            tgt = np.array([t for _, t in chunk], dtype=np.int64).reshape(batch_size, key[1])
            batches.append(Batch(src, tgt))
    return batches


def read_parallel(src_path, tgt_path):
    with open(src_path, encoding="utf-8") as fh:
        src = fh.read().splitlines()
    with open(tgt_path, encoding="utf-8") as fh:
        tgt = fh.read().splitlines()
    if len(src) != len(tgt):
        raise CorpusError(f"line counts differ: {src_path} has {len(src)}, {tgt_path} has {len(tgt)}")
    return list(zip(src, tgt))


def encode_pairs(lines, src_vocab, tgt_vocab):
    return [(encode(s, src_vocab), encode(t, tgt_vocab)) for s, t in lines]


def save_batches(batches, directory):
    os.makedirs(directory, exist_ok=True)
    for i, b in enumerate(batches):
        np.savez(os.path.join(directory, f"batch_{i:06d}.npz"), source=b.source, target=b.target)


def load_batches(directory):
    names = sorted(n for n in os.listdir(directory) if n.startswith("batch_") and n.endswith(".npz"))
    batches = []
    for name in names:
        with np.load(os.path.join(directory, name)) as data:
            batches.append(Batch(data["source"], data["target"]))
    return batches
