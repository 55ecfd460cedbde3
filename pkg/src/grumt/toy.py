"""Synthetic parallel corpora for smoke tests and overfitting checks."""
import numpy as np

from .corpus import Vocabulary, encode_pairs
from .embeddings import EmbeddingTable


def symbol_vocab(n_symbols):
    return Vocabulary(tuple(f"w{i}" for i in range(n_symbols)), n_symbols)


def _random_sentences(rng, n, n_symbols, lengths):
    out = []
    for length in lengths:
        out.append(" ".join(f"w{s}" for s in rng.integers(0, n_symbols, size=length)))
    return out


def copy_corpus(n_pairs, n_symbols, lengths, seed):
    """(vocab, encoded pairs) where each target repeats its source."""
    rng = np.random.default_rng(seed)
    lens = [lengths[i % len(lengths)] for i in range(n_pairs)]
    sents = _random_sentences(rng, n_pairs, n_symbols, lens)
    vocab = symbol_vocab(n_symbols)
    return vocab, encode_pairs(list(zip(sents, sents)), vocab, vocab)


def reversal_corpus(n_pairs, n_symbols, min_len, max_len, seed):
    """(vocab, encoded pairs) where each target is its source reversed."""
    rng = np.random.default_rng(seed)
    lens = rng.integers(min_len, max_len + 1, size=n_pairs)
    sents = _random_sentences(rng, n_pairs, n_symbols, lens)
    lines = [(s, " ".join(reversed(s.split()))) for s in sents]
    vocab = symbol_vocab(n_symbols)
    return vocab, encode_pairs(lines, vocab, vocab)


def random_table(vocab, dim, seed, scale=1.0, dtype=np.float32):
    """Gaussian embedding rows, a stand-in for a pre-trained file."""
    rng = np.random.default_rng(seed)
    vectors = (scale * rng.standard_normal((len(vocab), dim))).astype(dtype)
    return EmbeddingTable(vectors, seed, vocab.nf_id, vocab.eos_id)
