"""Dense numeric primitives used by the GRU stack.

Everything works on numpy arrays. Production paths run in float32; the
gradient oracle runs in float64. All randomness goes through numpy's
``default_rng`` (PCG64), seeded explicitly.
"""
import numpy as np

PROB_FLOOR = 1e-12


class NumericError(ValueError):
    pass


def make_rng(seed):
    """Return a PCG64 generator; passes an existing Generator through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def matvec(m, v):
    m = np.asarray(m)
    v = np.asarray(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise NumericError(f"matvec shape mismatch: {m.shape} x {v.shape}")
    return m @ v


def sigmoid(v):
    # tanh form: no overflow for large |v|
    v = np.asarray(v)
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def tanh(v):
    return np.tanh(v)


def hadamard(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise NumericError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def softmax(v, axis=-1):
    v = np.asarray(v)
    if v.size == 0:
        raise NumericError("softmax of an empty vector")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v)
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(pred, target_id):
    """Loss and pre-softmax logit gradient for one probability vector.

    Returns ``(loss, grad)`` with ``loss = -ln pred[target]`` (pred clamped
    at 1e-12) and ``grad = pred - onehot(target)``.
    """
    pred = np.asarray(pred)
    if not np.issubdtype(pred.dtype, np.floating):
        pred = pred.astype(np.float64)
    if not 0 <= target_id < pred.shape[-1]:
        raise NumericError(f"target id {target_id} outside [0, {pred.shape[-1]})")
    # stays in pred's dtype so extended-precision oracles keep their digits
    loss = -np.log(np.maximum(pred[target_id], pred.dtype.type(PROB_FLOOR)))
    grad = pred.copy()
    grad[target_id] -= 1.0
    return loss, grad


def batch_cross_entropy(probs, targets):
    """Vectorized cross entropy over leading axes.

    ``probs`` has shape (..., V) and ``targets`` shape (...). Returns the
    per-position losses and the logit gradients (unscaled).
    """
    targets = np.asarray(targets)
    if targets.size and (targets.min() < 0 or targets.max() >= probs.shape[-1]):
        raise NumericError("target id out of range")
    picked = np.take_along_axis(probs, targets[..., None], axis=-1)[..., 0]
    losses = -np.log(np.maximum(picked, PROB_FLOOR))
    grad = probs.copy()
    np.put_along_axis(grad, targets[..., None], picked[..., None] - 1.0, axis=-1)
    return losses, grad


def glorot_bound(rows, cols):
    return float(np.sqrt(6.0 / (rows + cols)))


def glorot_uniform(rows, cols, rng_seed, dtype=np.float32):
    """Uniform(-b, b) matrix with b = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise NumericError("glorot_uniform needs rows, cols >= 1")
    rng = make_rng(rng_seed)
    b = glorot_bound(rows, cols)
    return rng.uniform(-b, b, size=(rows, cols)).astype(dtype)


def finite_difference_check(f, params, analytic_grad, epsilon=1e-4, order=2,
                            dtype=np.float64):
    """Compare an analytic gradient against central differences of ``f``.

    ``f`` takes a flat parameter vector of ``dtype`` and returns a scalar.
    ``order=2`` is the plain two-point central difference; ``order=4`` the
    five-point stencil. The result is the worst per-coordinate relative
    error ``|a - n| / max(|a|, |n|, 1e-8)``.

    Components near 1e-8 are common in small recurrent nets, and at that
    size float64 roundoff in ``f`` alone exceeds 1e-5 relative error; pass
    ``dtype=np.longdouble`` with ``order=4`` for a tight check.
    """
    if epsilon <= 0:
        raise NumericError("epsilon must be positive")
    if order not in (2, 4):
        raise NumericError("order must be 2 or 4")
    p = np.array(params, dtype=dtype).ravel()
    analytic = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if analytic.shape != p.shape:
        raise NumericError("analytic gradient length differs from params")
    numeric = np.empty(p.size, dtype=dtype)
    eps = dtype(epsilon)

    for i in range(p.size):
        orig = p[i]

        def at(delta):
            p[i] = orig + delta
            value = f(p)
            p[i] = orig
            if not np.isfinite(value):
                raise NumericError(f"objective not finite at coordinate {i}")
            return dtype(value)

        if order == 2:
            numeric[i] = (at(eps) - at(-eps)) / (2 * eps)
        else:
            numeric[i] = (-at(2 * eps) + 8 * at(eps) - 8 * at(-eps) + at(-2 * eps)) / (12 * eps)

    if not p.size:
        return 0.0
    numeric = numeric.astype(np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
