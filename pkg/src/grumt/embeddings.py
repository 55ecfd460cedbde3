"""Pre-trained word vectors in GloVe text format.

Rows the file does not cover (including NF and EOS) are filled with
uniform(-0.1, 0.1) samples from a recorded seed, so a table can always be
rebuilt bit for bit from (file, vocabulary, seed).
"""
from dataclasses import dataclass

import numpy as np

from .numerics import make_rng

FILL_RANGE = 0.1


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    vectors: np.ndarray  # (vocab id count, dim)
    seed: int
    nf_id: int
    eos_id: int

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def nf_vector(self):
        return self.vectors[self.nf_id]

    @property
    def eos_vector(self):
        return self.vectors[self.eos_id]

    def __len__(self):
        return self.vectors.shape[0]


def _sniff_dim(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            fields = line.split()
            if fields:
                return len(fields) - 1
    raise EmbeddingFormatError(f"{path}: no vectors found")


def fill_table(vocab, dim, seed, dtype=np.float32):
    rng = make_rng(seed)
    vectors = rng.uniform(-FILL_RANGE, FILL_RANGE, size=(len(vocab), dim)).astype(dtype)
    return EmbeddingTable(vectors, seed, vocab.nf_id, vocab.eos_id)


def load_embeddings(path, vocab, dim=300, seed=0, dtype=np.float32):
    """Build the table for ``vocab`` from a GloVe text file.

    Pass ``dim=None`` to take the dimension from the first line.
    """
    if dim is None:
        dim = _sniff_dim(path)
    table = fill_table(vocab, dim, seed, dtype)
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected token plus {dim} values, got {len(fields) - 1} values")
            token = fields[0]
            if token not in vocab or token in seen:
                continue
            try:
                row = np.array([float(v) for v in fields[1:]])
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
            if not np.all(np.isfinite(row)):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value")
            table.vectors[vocab.id_of(token)] = row
            seen.add(token)
    return table


def embed(seq, table):
    """Look up rows for a sequence of ids; returns a (len(seq), dim) array."""
    ids = np.asarray(seq, dtype=np.int64).reshape(-1)
    return table.vectors[ids]


def write_embeddings(path, tokens, vectors):
    with open(path, "w", encoding="utf-8") as fh:
        for tok, row in zip(tokens, vectors):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")
