"""Randomized finite-difference audit of the BPTT gradients."""
from dataclasses import dataclass

import numpy as np

from .gru import backward_batch, forward_batch, init_parameters
from .numerics import batch_cross_entropy, finite_difference_check, softmax

# extended precision keeps roundoff in f well below 1e-5 relative error
# even for gradient components near 1e-8
ORACLE_DTYPE = np.longdouble
ORACLE_EPSILON = 1e-3
ORACLE_ORDER = 4


@dataclass
class GradcheckReport:
    errors: list
    threshold: float

    @property
    def worst(self):
        return max(self.errors)

    @property
    def passed(self):
        return self.worst < self.threshold

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"instances={len(self.errors)} max_rel_error={self.worst:.3e} "
                f"threshold={self.threshold:.1e} {verdict}")


def random_instance(rng):
    """Small random network, inputs and per-step targets (float64)."""
    T = int(rng.integers(1, 5))
    layers = int(rng.integers(1, 3))
    hidden = int(rng.integers(1, 7))
    vocab = int(rng.integers(2, 9))
    dim = int(rng.integers(1, 6))
    params = init_parameters(dim, hidden, layers, vocab, rng, np.float64)
    params.output_bias[:] = 0.5 * rng.standard_normal(vocab)
    x = rng.standard_normal((T, 1, dim))
    targets = rng.integers(0, vocab, size=(T, 1))
    return params, x, targets


def instance_error(params, x, targets, backward=backward_batch):
    """Worst relative error of ``backward`` on one instance.

    The loss is the summed cross entropy of a prediction at every step.
    """
    steps = list(range(x.shape[0]))
    _, logits, tape = forward_batch(x, params, output_steps=steps)
    _, dlogits = batch_cross_entropy(softmax(logits), targets)
    analytic = backward(tape, dlogits, params).flatten()

    wide = params.astype(ORACLE_DTYPE)
    x_wide = x.astype(ORACLE_DTYPE)

    def loss(flat):
        _, lg, _ = forward_batch(x_wide, wide.unflatten(flat), output_steps=steps)
        losses, _ = batch_cross_entropy(softmax(lg), targets)
        return losses.sum()

    return finite_difference_check(loss, params.flatten(), analytic, ORACLE_EPSILON,
                                   ORACLE_ORDER, ORACLE_DTYPE)


def gradcheck(seed=7, instances=100, threshold=1e-5, backward=backward_batch):
    if instances < 1:
        raise ValueError("instances must be at least 1")
    rng = np.random.default_rng(seed)
    errors = [instance_error(*random_instance(rng), backward=backward) for _ in range(instances)]
    return GradcheckReport(errors, threshold)
