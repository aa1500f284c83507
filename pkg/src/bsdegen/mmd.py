"""Kernel maximum mean discrepancy and the composite training loss.

The two-sample statistic is the unbiased estimator

    MMD^2(X, Y) = mean_offdiag K(X_i, X_j) + mean_offdiag K(Y_i, Y_j)
                  - 2 * mean K(X_i, Y_j)

with self-terms excluding the diagonal; it can legitimately go negative and
is never clamped. Kernels are Gaussian: a single-bandwidth RBF or a uniform
mixture over a bandwidth ladder ("multiscale"). Reductions are computed
with exact summation, so the estimate is exactly invariant under permuting
samples within either batch.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Tape, as_tensor


@dataclass(frozen=True)
class KernelSpec:
    family: str = "multiscale"
    bandwidths: tuple = (1.0, 2.0, 4.0, 8.0)

    def __post_init__(self):
        if self.family not in ("rbf", "multiscale"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        bw = tuple(float(b) for b in self.bandwidths)
        if len(bw) == 0 or any(b <= 0 for b in bw):
            raise ValueError("bandwidths must be non-empty and strictly positive")
        if self.family == "rbf" and len(bw) != 1:
            raise ValueError("rbf kernel takes exactly one bandwidth")
        object.__setattr__(self, "bandwidths", bw)

    @classmethod
    def default_multiscale(cls, dim):
        """Geometric ladder {1,2,4,8} scaled by sqrt(dim)/2."""
        base = math.sqrt(dim) / 2.0
        return cls(family="multiscale", bandwidths=tuple(s * base for s in (1, 2, 4, 8)))


def kernel_eval(spec, x, y):
    """Scalar kernel value between two vectors."""
    x = as_tensor(x, "x")
    y = as_tensor(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"kernel operands differ in shape: {x.shape} vs {y.shape}")
    d2 = float(np.sum((x - y) ** 2))
    vals = [math.exp(-d2 / (2.0 * b * b)) for b in spec.bandwidths]
    return math.fsum(vals) / len(vals)


def _batch(tape, x, name):
    node = x if isinstance(x, Node) else tape.const(x, name)
    if node.value.ndim != 2:
        raise ValueError(f"{name} must be a [count, dim] batch, got {node.value.shape}")
    return node


def kernel_gram(x, y, spec, tape):
    """Tape node for the m x n kernel matrix between two batches."""
    x = _batch(tape, x, "x batch")
    y = _batch(tape, y, "y batch")
    return tape.kernel_mix(tape.sqdist(x, y), np.asarray(spec.bandwidths))


def mmd2_unbiased(x, y, spec, tape):
    """Unbiased two-sample MMD^2 as a tape node; gradients flow into node batches."""
    x = _batch(tape, x, "x batch")
    y = _batch(tape, y, "y batch")
    if x.value.shape[0] < 2 or y.value.shape[0] < 2:
        raise ValueError(
            f"unbiased estimate needs at least 2 samples per batch, "
            f"got {x.value.shape[0]} and {y.value.shape[0]}"
        )
    if x.value.shape[1] != y.value.shape[1]:
        raise ValueError(f"batch dims differ: {x.value.shape[1]} vs {y.value.shape[1]}")
    k_xx = kernel_gram(x, x, spec, tape)
    k_yy = kernel_gram(y, y, spec, tape)
    k_xy = kernel_gram(x, y, spec, tape)
    self_terms = tape.add(tape.offdiag_mean(k_xx), tape.offdiag_mean(k_yy))
    return tape.sub(self_terms, tape.scale(tape.mean(k_xy), 2.0))


def mmd2_value(x, y, spec):
    """Plain float MMD^2 between two arrays (throwaway tape)."""
    return float(mmd2_unbiased(x, y, spec, Tape()).value)


def training_loss(generated, target, spec, tape, beta=0.0, pairing=None):
    """MMD^2 plus, when beta > 0, beta times the paired mean squared error.

    pairing maps generated row i to target row pairing[i]; it is required
    whenever beta > 0 (index pairing is meaningless for the pure MMD term).
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    gen = _batch(tape, generated, "generated batch")
    tgt = _batch(tape, target, "target batch")
    loss = mmd2_unbiased(gen, tgt, spec, tape)
    if beta == 0.0:
        return loss
    if pairing is None:
        raise ValueError("beta > 0 requires a pairing between generated and target samples")
    pairing = np.asarray(pairing, dtype=np.int64)
    if pairing.shape != (gen.value.shape[0],):
        raise ValueError(
            f"pairing shape {pairing.shape} != generated count {gen.value.shape[0]}"
        )
    paired = tape.const(tgt.value[pairing], "paired targets")
    mse = tape.mean(tape.square(tape.sub(gen, paired)))
    return tape.add(loss, tape.scale(mse, beta))
