"""Training loop, optimizer and checkpoint container.

Two regimes share everything but the target-side input:

* ``teacher_forced``: position k sees the ground-truth prefix y_1..y_k.
* ``self_fed``: position k sees the model's own argmax words. The argmax
  and re-embedding are not differentiated; the chosen vectors enter the
  backward pass as constant inputs.

Since prefixes nest, one forward run over ``source + prefix[:-1]`` yields
the logits for every target position of a batch.
"""
import os
import struct
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .gru import ModelParameters, GruLayerParameters, LAYER_FIELDS, backward_batch, \
    forward_batch, init_parameters
from .numerics import batch_cross_entropy, softmax
from .translator import predict_positions

MAGIC = b"GRUMT"
FORMAT_VERSION = 1

METHODS = ("teacher_forced", "self_fed")


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainingConfig:
    method: str = "teacher_forced"
    batch_size: int = 128
    layers: int = 4
    hidden_size: int = 500
    learning_rate: float = 0.01
    momentum_coefficient: float = 0.9
    gradient_clip: float = 100.0
    max_epochs: int = 1
    rng_seed: int = 0
    checkpoint_interval: int = 500
    dtype: str = "float32"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        # lr = 0 is allowed; a frozen run is a useful determinism probe
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum_coefficient < 1:
            raise ValueError("momentum_coefficient must lie in [0, 1)")
        if self.gradient_clip <= 0:
            raise ValueError("gradient_clip must be positive")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_text(cls, text):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = types[key](value)
        return cls(**values)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


@dataclass
class OptimizerState:
    velocity: ModelParameters

    @classmethod
    def zeros_like(cls, params):
        return cls(params.zeros_like())


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)  # (epoch, batch, loss, millis)
    epochs: list = field(default_factory=list)  # (epoch, mean loss)

    @property
    def losses(self):
        return [r[2] for r in self.records]


def _table_inputs(ids, table, dtype):
    return table.vectors[ids.T].astype(dtype, copy=False)


def _loss_and_grads(x, source_len, target, params):
    E = target.shape[1]
    steps = range(source_len - 1, source_len + E - 1)
    _, logits, tape = forward_batch(x, params, output_steps=steps)
    probs = softmax(logits.astype(np.promote_types(logits.dtype, np.float64)))
    losses, dlogits = batch_cross_entropy(probs, target.T)
    dlogits /= losses.size
    grads = backward_batch(tape, dlogits, params)
    return float(losses.mean()), grads


def batch_loss_teacher_forced(batch, params, src_table, tgt_table):
    """Mean cross entropy over every (pair, position) with true prefixes."""
    src = _table_inputs(batch.source, src_table, params.dtype)
    prefix = _table_inputs(batch.target[:, :-1], tgt_table, params.dtype)
    x = np.concatenate([src, prefix])
    return _loss_and_grads(x, batch.source_len, batch.target, params)


def batch_loss_self_fed(batch, params, src_table, tgt_table):
    """Mean cross entropy when each prefix is the model's own argmax words."""
    preds = predict_positions(batch.source, batch.target, params, src_table, tgt_table,
                              prefix_mode="self_fed")
    src = _table_inputs(batch.source, src_table, params.dtype)
    prefix = _table_inputs(preds[:, :-1], tgt_table, params.dtype)
    x = np.concatenate([src, prefix])
    return _loss_and_grads(x, batch.source_len, batch.target, params)


BATCH_LOSS = {
    "teacher_forced": batch_loss_teacher_forced,
    "self_fed": batch_loss_self_fed,
}


def clip_gradients(grads, limit):
    """Element-wise clamp of every gradient component to [-limit, limit]."""
    if limit <= 0:
        raise ValueError("clip limit must be positive")
    return grads.map(lambda a: np.clip(a, -limit, limit))


def nesterov_step(params, grads, opt_state, lr, mu):
    """In-place Nesterov momentum update, in the form

        v <- mu * v - lr * g
        p <- p + mu * v - lr * g

    with g the gradient at the current parameters. Returns (params, opt_state).
    """
    ps, gs, vs = params.arrays(), grads.arrays(), opt_state.velocity.arrays()
    if [a.shape for a in ps] != [a.shape for a in gs] or [a.shape for a in ps] != [a.shape for a in vs]:
        raise ValueError("parameter, gradient and velocity shapes differ")
    for p, g, v in zip(ps, gs, vs):
        step = lr * g
        v *= mu
        v -= step
        p += mu * v - step
    return params, opt_state


# -- checkpoint container ---------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParameters
    velocity: ModelParameters
    seed: int
    epoch: int
    batch: int


def _write_arrays(fh, arrays):
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def save_checkpoint(path, params, opt_state, seed, epoch, batch):
    """Write the binary container atomically (via ``path + '.partial'``).

    Layout: b"GRUMT", version byte, four little-endian u32 (layers,
    hidden_size, input_size, target vocab id count), parameters as
    little-endian float32 in ``ModelParameters.arrays()`` order, velocity
    buffers in the same order, u64 seed, u32 completed epochs, u32
    batches completed in the current epoch.
    """
    tmp = path + ".partial"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<4I", params.n_layers, params.hidden_size,
                             params.input_size, params.vocab_size))
        _write_arrays(fh, params.arrays())
        _write_arrays(fh, opt_state.velocity.arrays())
        fh.write(struct.pack("<QII", seed, epoch, batch))
    os.replace(tmp, path)


def _shapes(layers, hidden, inp, vocab):
    shapes = []
    for k in range(layers):
        d = inp if k == 0 else hidden
        for name in LAYER_FIELDS:
            shapes.append((hidden, d) if name.startswith("W") else (hidden, hidden))
    shapes.append((vocab, hidden))
    shapes.append((vocab,))
    return shapes


def _assemble(arrays, layers):
    n = len(LAYER_FIELDS)
    gru = [GruLayerParameters(*arrays[k * n:(k + 1) * n]) for k in range(layers)]
    return ModelParameters(gru, arrays[-2], arrays[-1])


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if data[5] != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {data[5]}")
    layers, hidden, inp, vocab = struct.unpack_from("<4I", data, 6)
    shapes = _shapes(layers, hidden, inp, vocab)
    pos = 6 + 16
    blocks = []
    for _ in range(2):
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            if pos + 4 * count > len(data):
                raise CheckpointError(f"{path}: truncated")
            a = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
            arrays.append(a.astype(dtype))
            pos += 4 * count
        blocks.append(_assemble(arrays, layers))
    if len(data) - pos != 16:
        raise CheckpointError(f"{path}: unexpected trailer length")
    seed, epoch, batch = struct.unpack_from("<QII", data, pos)
    return Checkpoint(blocks[0], blocks[1], seed, epoch, batch)


# -- training loop ----------------------------------------------------------

def init_rng(seed):
    return np.random.default_rng([seed, 0])


def shuffle_rng(seed):
    return np.random.default_rng([seed, 1])


def train(config, batches, src_table, tgt_table, checkpoint_dir=None, log_path=None,
          resume=None, logger=None):
    """Fit a fresh (or resumed) model on ``batches``.

    Parameters come from a Glorot stream seeded by ``config.rng_seed``;
    batch order is reshuffled every epoch from a second stream of the same
    seed. With ``checkpoint_dir``, ``latest.grumt`` is rewritten every
    ``checkpoint_interval`` batches and at each epoch end, and
    ``final.grumt`` is written at the end.
    """
    if not batches:
        raise TrainingError("no batches to train on")
    if src_table.dim != tgt_table.dim:
        raise TrainingError("source and target embeddings must share a dimension")
    dtype = np.dtype(config.dtype)
    loss_fn = BATCH_LOSS[config.method]

    if resume is None:
        params = init_parameters(src_table.dim, config.hidden_size, config.layers,
                                 len(tgt_table), init_rng(config.rng_seed), dtype)
        opt = OptimizerState.zeros_like(params)
        start_epoch, start_batch = 0, 0
    else:
        if resume.seed != config.rng_seed:
            raise TrainingError("checkpoint seed differs from config rng_seed")
        params = resume.params.astype(dtype)
        opt = OptimizerState(resume.velocity.astype(dtype))
        start_epoch, start_batch = resume.epoch, resume.batch
    params.validate()
    if params.vocab_size != len(tgt_table) or params.input_size != src_table.dim:
        raise TrainingError("model shape does not match the embedding tables")

    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
    log = TrainingLog()
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None

    def checkpoint(epoch, batch, name="latest.grumt"):
        if checkpoint_dir:
            save_checkpoint(os.path.join(checkpoint_dir, name), params, opt,
                            config.rng_seed, epoch, batch)

    order_rng = shuffle_rng(config.rng_seed)
    try:
        for epoch in range(config.max_epochs):
            order = order_rng.permutation(len(batches))
            if epoch < start_epoch:
                continue
            first = start_batch if epoch == start_epoch else 0
            epoch_losses = []
            for pos in range(first, len(order)):
                t0 = time.perf_counter()
                loss, grads = loss_fn(batches[order[pos]], params, src_table, tgt_table)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch} batch {pos}")
                grads = clip_gradients(grads, config.gradient_clip)
                nesterov_step(params, grads, opt, config.learning_rate,
                              config.momentum_coefficient)
                millis = int(round((time.perf_counter() - t0) * 1000))
                log.records.append((epoch, pos, loss, millis))
                epoch_losses.append(loss)
                if log_fh:
                    log_fh.write(f"{epoch},{pos},{loss!r},{millis}\n")
                if config.checkpoint_interval and (pos + 1) % config.checkpoint_interval == 0:
                    _check_finite(opt, epoch, pos)
                    checkpoint(epoch, pos + 1)
            mean = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
            log.epochs.append((epoch, mean))
            if logger:
                logger(f"epoch {epoch}: mean loss {mean:.6f}")
            _check_finite(opt, epoch, len(order))
            checkpoint(epoch + 1, 0)
        checkpoint(config.max_epochs, 0, "final.grumt")
    finally:
        if log_fh:
            log_fh.close()
    return params, log


def _check_finite(opt, epoch, pos):
    if not all(np.all(np.isfinite(v)) for v in opt.velocity.arrays()):
        raise TrainingError(f"non-finite velocity at epoch {epoch} batch {pos}")
