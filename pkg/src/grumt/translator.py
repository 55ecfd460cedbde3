"""Next-word classification, sequence scoring and decoding.

The classifier sees one recurrent stream: the source embeddings (ending in
the source EOS, which doubles as the separator) followed by the target
prefix embeddings. The distribution for the first target word is read
right after the source EOS.
"""
from dataclasses import dataclass

import numpy as np

from .gru import forward_batch, output_logits, step
from .numerics import log_softmax, softmax


class DecodeError(ValueError):
    pass


def _check_ids(ids, table, side):
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= len(table)):
        raise DecodeError(f"{side} ids outside [0, {len(table)})")
    return ids


def _stream(source, prefix, params, src_table, tgt_table):
    """(T, B, D) input built from id arrays shaped (B, F) and (B, k)."""
    parts = [src_table.vectors[source.T]]
    if prefix.shape[1]:
        parts.append(tgt_table.vectors[prefix.T])
    return np.concatenate(parts).astype(params.dtype, copy=False)


def next_word_distribution(source, partial_target, params, src_table, tgt_table):
    src = _check_ids(source, src_table, "source")
    if src.size == 0:
        raise DecodeError("source sequence is empty")
    prefix = _check_ids(partial_target, tgt_table, "target")
    x = _stream(src[None, :], prefix[None, :], params, src_table, tgt_table)
    _, logits, _ = forward_batch(x, params)
    return softmax(logits[0, 0].astype(np.float64))


def step_log_probs(source, target, params, src_table, tgt_table):
    """ln P(target[k] | source, target[:k]) for every k, from one forward run."""
    src = _check_ids(source, src_table, "source")
    tgt = _check_ids(target, tgt_table, "target")
    if src.size == 0:
        raise DecodeError("source sequence is empty")
    if tgt.size == 0:
        return np.zeros(0)
    F = src.size
    x = _stream(src[None, :], tgt[None, :-1], params, src_table, tgt_table)
    _, logits, _ = forward_batch(x, params, output_steps=range(F - 1, F + tgt.size - 1))
    logp = log_softmax(logits[:, 0, :].astype(np.float64))
    return logp[np.arange(tgt.size), tgt]


def sequence_log_probability(source, target, params, src_table, tgt_table, require_eos=True):
    """Log of the product of next-word conditionals over ``target``.

    With ``require_eos=False`` the target may be an unfinished prefix; the
    result is then the probability of the decoder emitting that prefix.
    """
    tgt = list(target)
    if require_eos and (not tgt or tgt[-1] != tgt_table.eos_id):
        raise DecodeError("target must end with the EOS id")
    return float(np.sum(step_log_probs(source, tgt, params, src_table, tgt_table)))


@dataclass
class DecodeState:
    source_ids: list
    emitted_ids: list
    cumulative_log_prob: float
    hidden: np.ndarray  # (layers, 1, hidden)
    log_probs: np.ndarray  # distribution for the next word, (1, V)


@dataclass
class Hypothesis:
    emitted_ids: tuple
    cumulative_log_prob: float
    finished: bool = False


def start_decode(source, params, src_table):
    src = _check_ids(source, src_table, "source")
    if src.size == 0:
        raise DecodeError("source sequence is empty")
    x = src_table.vectors[src][:, None, :].astype(params.dtype, copy=False)
    hidden, logits, _ = forward_batch(x, params)
    return DecodeState(list(src), [], 0.0, hidden, log_softmax(logits[0].astype(np.float64)))


def _advance(hidden, tokens, params, tgt_table):
    x = tgt_table.vectors[np.asarray(tokens)].astype(params.dtype, copy=False)
    hidden = step(params, x, hidden)
    return hidden, log_softmax(output_logits(params, hidden[-1]).astype(np.float64))


def extend(state, token, params, tgt_table):
    lp = state.log_probs[0, token]
    hidden, log_probs = _advance(state.hidden, [token], params, tgt_table)
    return DecodeState(state.source_ids, state.emitted_ids + [int(token)],
                       state.cumulative_log_prob + lp, hidden, log_probs)


def greedy_decode(source, params, src_table, tgt_table, max_len=50):
    """Emit the argmax word until EOS or ``max_len`` words.

    Ties go to the lowest id. Returns ``(ids, log_prob)``; ids include the
    EOS when one was emitted.
    """
    if max_len < 1:
        raise DecodeError("max_len must be at least 1")
    eos = tgt_table.eos_id
    state = start_decode(source, params, src_table)
    hidden, log_probs = state.hidden, state.log_probs
    ids = []
    score = 0.0
    while True:
        tok = int(np.argmax(log_probs[0]))
        score = score + log_probs[0, tok]
        ids.append(tok)
        if tok == eos or len(ids) == max_len:
            return ids, float(score)
        hidden, log_probs = _advance(hidden, [tok], params, tgt_table)


def beam_decode(source, params, src_table, tgt_table, beam_width=4, max_len=50):
    """Beam search ranked by raw cumulative log probability.

    Finished hypotheses (EOS emitted or ``max_len`` reached) leave the beam
    and are ranked against each other at the end. Returns all finished
    hypotheses, best first.
    """
    if beam_width < 1:
        raise DecodeError("beam_width must be at least 1")
    if max_len < 1:
        raise DecodeError("max_len must be at least 1")
    eos = tgt_table.eos_id
    state = start_decode(source, params, src_table)
    hidden, log_probs = state.hidden, state.log_probs
    live = [Hypothesis((), 0.0)]
    finished = []
    while live:
        cands = []
        for b, hyp in enumerate(live):
            row = log_probs[b]
            for v in range(row.size):
                cands.append((hyp.cumulative_log_prob + row[v], b, v))
        # stable sort keeps lower beam index / lower id first among ties
        cands.sort(key=lambda c: -c[0])
        keep_rows, keep_tokens, new_live = [], [], []
        for score, b, v in cands[:beam_width]:
            ids = live[b].emitted_ids + (v,)
            if v == eos or len(ids) == max_len:
                finished.append(Hypothesis(ids, float(score), True))
            else:
                new_live.append(Hypothesis(ids, score))
                keep_rows.append(b)
                keep_tokens.append(v)
        live = new_live
        if not live:
            break
        best_done = max((h.cumulative_log_prob for h in finished), default=-np.inf)
        if best_done >= max(h.cumulative_log_prob for h in live):
            break
        hidden, log_probs = _advance(hidden[:, keep_rows, :], keep_tokens, params, tgt_table)
    finished.sort(key=lambda h: -h.cumulative_log_prob)
    return finished


def predict_positions(source, target, params, src_table, tgt_table, prefix_mode="correct"):
    """Argmax prediction at every target position for a uniform-shape batch.

    ``source`` is (B, F) and ``target`` (B, E). With ``correct`` the prefix
    fed at position k is target[:, :k]; with ``self_fed`` it is the model's
    own earlier predictions. Returns a (B, E) int array.
    """
    source = np.asarray(source, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    B, F = source.shape
    E = target.shape[1]
    if prefix_mode == "correct":
        x = _stream(source, target[:, :-1], params, src_table, tgt_table)
        _, logits, _ = forward_batch(x, params, output_steps=range(F - 1, F + E - 1))
        return np.argmax(logits, axis=-1).T
    if prefix_mode != "self_fed":
        raise DecodeError(f"unknown prefix mode {prefix_mode!r}")
    x = _stream(source, target[:, :0], params, src_table, tgt_table)
    hidden, logits, _ = forward_batch(x, params)
    logits = logits[0]
    preds = np.empty((B, E), dtype=np.int64)
    for k in range(E):
        preds[:, k] = np.argmax(logits, axis=-1)
        if k + 1 < E:
            xin = tgt_table.vectors[preds[:, k]].astype(params.dtype, copy=False)
            hidden = step(params, xin, hidden)
            logits = output_logits(params, hidden[-1])
    return preds


def next_word_accuracy(dataset, params, src_table, tgt_table, prefix_mode="correct",
                       average="token"):
    """Fraction of target positions whose argmax matches the ground truth.

    ``average="token"`` pools all positions; ``"sentence"`` averages the
    per-pair accuracies.
    """
    if not dataset:
        raise DecodeError("dataset is empty")
    if average not in ("token", "sentence"):
        raise DecodeError(f"unknown average {average!r}")
    groups = {}
    for src, tgt in dataset:
        groups.setdefault((len(src), len(tgt)), []).append((src, tgt))
    hits = total = 0
    sentence_scores = []
    for key in sorted(groups):
        pairs = groups[key]
        src = np.array([s for s, _ in pairs], dtype=np.int64)
        tgt = np.array([t for _, t in pairs], dtype=np.int64)
        correct = predict_positions(src, tgt, params, src_table, tgt_table, prefix_mode) == tgt
        hits += int(correct.sum())
        total += correct.size
        sentence_scores.extend(correct.mean(axis=1).tolist())
    if average == "sentence":
        return float(np.mean(sentence_scores))
    return hits / total
