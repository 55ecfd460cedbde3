"""Stacked GRU classifier: forward pass, output projection and BPTT.

Cell equations (no gate biases)::

    z  = sigmoid(W_z x + U_z h)
    r  = sigmoid(W_v x + U_v h)
    h~ = tanh(W x + U (r * h))
    h' = z * h + (1 - z) * h~

The update gate keeps the *previous* state: z = 1 means h' = h.

Arrays are row-major with the batch on the leading axis, so a batch of
inputs ``x`` of shape (B, D) is multiplied as ``x @ W.T``. Hidden state for
the whole stack is an array of shape (layers, B, hidden).
"""
from dataclasses import dataclass, field

import numpy as np

from .numerics import glorot_uniform, make_rng, sigmoid

LAYER_FIELDS = ("W", "U", "W_z", "U_z", "W_v", "U_v")


class ShapeError(ValueError):
    pass


@dataclass
class GruLayerParameters:
    W: np.ndarray
    U: np.ndarray
    W_z: np.ndarray
    U_z: np.ndarray
    W_v: np.ndarray
    U_v: np.ndarray

    @property
    def input_size(self):
        return self.W.shape[1]

    @property
    def hidden_size(self):
        return self.W.shape[0]

    def arrays(self):
        return [getattr(self, name) for name in LAYER_FIELDS]


@dataclass
class ModelParameters:
    """Every trainable array of the network.

    Also used as the container for gradients and momentum buffers, which
    share its shapes.
    """

    layers: list
    output_weight: np.ndarray
    output_bias: np.ndarray

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def hidden_size(self):
        return self.layers[0].hidden_size

    @property
    def input_size(self):
        return self.layers[0].input_size

    @property
    def vocab_size(self):
        return self.output_weight.shape[0]

    @property
    def dtype(self):
        return self.output_weight.dtype

    def arrays(self):
        """Flat list in checkpoint order: per layer W, U, W_z, U_z, W_v, U_v;
        then output weight and bias."""
        out = []
        for layer in self.layers:
            out.extend(layer.arrays())
        out.append(self.output_weight)
        out.append(self.output_bias)
        return out

    def map(self, fn):
        layers = [GruLayerParameters(*[fn(a) for a in layer.arrays()])
                  for layer in self.layers]
        return ModelParameters(layers, fn(self.output_weight), fn(self.output_bias))

    def copy(self):
        return self.map(np.copy)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def astype(self, dtype):
        return self.map(lambda a: a.astype(dtype))

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, flat):
        flat = np.asarray(flat)
        pos = 0

        def take(a):
            nonlocal pos
            piece = flat[pos:pos + a.size].reshape(a.shape)
            pos += a.size
            return piece.astype(a.dtype, copy=True)

        out = self.map(take)
        if pos != flat.size:
            raise ShapeError(f"flat vector has {flat.size} entries, expected {pos}")
        return out

    def validate(self):
        h = self.hidden_size
        for k, layer in enumerate(self.layers):
            d = self.input_size if k == 0 else h
            for name in LAYER_FIELDS:
                a = getattr(layer, name)
                want = (h, d) if name.startswith("W") else (h, h)
                if a.shape != want:
                    raise ShapeError(f"layer {k} {name} has shape {a.shape}, expected {want}")
        if self.output_weight.shape[1] != h:
            raise ShapeError("output weight does not match hidden size")
        if self.output_bias.shape != (self.vocab_size,):
            raise ShapeError("output bias does not match vocabulary size")
        return self


def init_parameters(input_size, hidden_size, n_layers, vocab_size, seed,
                    dtype=np.float32):
    """Glorot-uniform weights drawn from one seeded stream; zero output bias."""
    rng = make_rng(seed)
    layers = []
    for k in range(n_layers):
        d = input_size if k == 0 else hidden_size
        mats = {}
        for name in LAYER_FIELDS:
            cols = d if name.startswith("W") else hidden_size
            mats[name] = glorot_uniform(hidden_size, cols, rng, dtype)
        layers.append(GruLayerParameters(**mats))
    out_w = glorot_uniform(vocab_size, hidden_size, rng, dtype)
    out_b = np.zeros(vocab_size, dtype=dtype)
    return ModelParameters(layers, out_w, out_b)


@dataclass
class CellCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_cand: np.ndarray
    rh: np.ndarray


def gru_cell_forward(x, h_prev, p):
    """One GRU step. ``x`` is (D,) or (B, D); ``h_prev`` matches in rank."""
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeError(
            f"cell expects input {p.input_size} / hidden {p.hidden_size}, "
            f"got {x.shape[-1]} / {h_prev.shape[-1]}")
    z = sigmoid(x @ p.W_z.T + h_prev @ p.U_z.T)
    r = sigmoid(x @ p.W_v.T + h_prev @ p.U_v.T)
    rh = r * h_prev
    h_cand = np.tanh(x @ p.W.T + rh @ p.U.T)
    h_new = z * h_prev + (1 - z) * h_cand
    return h_new, CellCache(x, h_prev, z, r, h_cand, rh)


def gru_cell_backward(dh_new, cache, p, g):
    """Backprop one batched step; accumulates weight grads into ``g``.

    Returns ``(dx, dh_prev)``.
    """
    x, h, z, r, c = cache.x, cache.h_prev, cache.z, cache.r, cache.h_cand
    dz = dh_new * (h - c)
    dc = dh_new * (1 - z)
    dh_prev = dh_new * z

    da_c = dc * (1 - c * c)
    g.W += da_c.T @ x
    g.U += da_c.T @ cache.rh
    drh = da_c @ p.U
    dr = drh * h
    dh_prev += drh * r
    dx = da_c @ p.W

    da_z = dz * z * (1 - z)
    g.W_z += da_z.T @ x
    g.U_z += da_z.T @ h
    dh_prev += da_z @ p.U_z
    dx += da_z @ p.W_z

    da_r = dr * r * (1 - r)
    g.W_v += da_r.T @ x
    g.U_v += da_r.T @ h
    dh_prev += da_r @ p.U_v
    dx += da_r @ p.W_v
    return dx, dh_prev


@dataclass
class StepTape:
    """Everything the backward pass needs from one forward run."""

    caches: list  # caches[t][layer]
    output_steps: list
    top_states: list  # top-layer h at each output step
    logits_shape: tuple
    batch_size: int
    extra: dict = field(default_factory=dict)


def zero_state(params, batch_size=None):
    shape = (params.n_layers, params.hidden_size)
    if batch_size is not None:
        shape = (params.n_layers, batch_size, params.hidden_size)
    return np.zeros(shape, dtype=params.dtype)


def step(params, x, hidden):
    """Advance the whole stack by one timestep without recording a tape."""
    new = np.empty_like(hidden)
    inp = x
    for k, layer in enumerate(params.layers):
        inp, _ = gru_cell_forward(inp, hidden[k], layer)
        new[k] = inp
    return new


def output_logits(params, top):
    return top @ params.output_weight.T + params.output_bias


def forward_batch(inputs, params, initial=None, output_steps=None):
    """Run a batch of equal-length sequences through the stack.

    ``inputs`` is (T, B, D). Logits are produced at each timestep listed in
    ``output_steps`` (default: only the last), shape (K, B, V).
    Returns ``(final_hidden, logits, tape)``.
    """
    inputs = np.asarray(inputs, dtype=params.dtype)
    if inputs.ndim != 3:
        raise ShapeError("forward_batch expects inputs of shape (T, B, D)")
    T, B, D = inputs.shape
    if T == 0:
        raise ShapeError("cannot run the network on an empty input sequence")
    if D != params.input_size:
        raise ShapeError(f"input vectors have length {D}, network expects {params.input_size}")
    if output_steps is None:
        output_steps = [T - 1]
    output_steps = list(output_steps)
    wanted = set(output_steps)
    if initial is None:
        hidden = zero_state(params, B)
    else:
        hidden = np.array(initial, dtype=params.dtype)
        if hidden.shape != (params.n_layers, B, params.hidden_size):
            raise ShapeError(f"initial state has shape {hidden.shape}")

    caches = []
    tops = {}
    for t in range(T):
        inp = inputs[t]
        row = []
        new = np.empty_like(hidden)
        for k, layer in enumerate(params.layers):
            inp, cache = gru_cell_forward(inp, hidden[k], layer)
            new[k] = inp
            row.append(cache)
        hidden = new
        caches.append(row)
        if t in wanted:
            tops[t] = inp
    top_states = [tops[t] for t in output_steps]
    logits = np.stack([output_logits(params, h) for h in top_states])
    tape = StepTape(caches, output_steps, top_states, logits.shape, B)
    return hidden, logits, tape


def backward_batch(tape, logit_grads, params, return_initial=False):
    """Reverse-mode gradients of a scalar loss whose logit gradient is given.

    ``logit_grads`` must reshape to the logits produced by the matching
    forward call.
    """
    dlog = np.asarray(logit_grads, dtype=params.dtype)
    if dlog.size != int(np.prod(tape.logits_shape)):
        raise ShapeError(f"logit gradient has {dlog.size} entries, tape expects {tape.logits_shape}")
    dlog = dlog.reshape(tape.logits_shape)
    if len(tape.caches[0]) != params.n_layers:
        raise ShapeError("tape was recorded with a different layer count")

    grads = params.zeros_like()
    dtop = {}
    for k, t in enumerate(tape.output_steps):
        g = dlog[k]
        grads.output_weight += g.T @ tape.top_states[k]
        grads.output_bias += g.sum(axis=0)
        d = g @ params.output_weight
        dtop[t] = dtop[t] + d if t in dtop else d

    L = params.n_layers
    dh_next = zero_state(params, tape.batch_size)
    for t in range(len(tape.caches) - 1, -1, -1):
        dh = dh_next.copy()
        if t in dtop:
            dh[L - 1] += dtop[t]
        for k in range(L - 1, -1, -1):
            dx, dh_prev = gru_cell_backward(dh[k], tape.caches[t][k],
                                            params.layers[k], grads.layers[k])
            dh_next[k] = dh_prev
            if k > 0:
                dh[k - 1] += dx
    if return_initial:
        return grads, dh_next
    return grads


def forward_sequence(inputs, params, initial=None):
    """Single-sequence forward pass.

    ``inputs`` is a list or (T, D) array of embedding vectors; ``initial``
    a (layers, hidden) state or None for zeros. Returns the final state,
    the logits after the last step and the tape.
    """
    x = np.asarray(inputs, dtype=params.dtype)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError("forward_sequence needs a non-empty (T, D) input")
    h0 = None if initial is None else np.asarray(initial)[:, None, :]
    final, logits, tape = forward_batch(x[:, None, :], params, h0)
    return final[:, 0, :], logits[0, 0], tape


def backward_sequence(tape, logit_gradient, params):
    return backward_batch(tape, logit_gradient, params)
