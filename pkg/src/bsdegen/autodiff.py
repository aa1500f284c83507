"""Tape-based reverse-mode differentiation over dense float64 arrays.

The engine is deliberately small: a ``Tape`` records an append-only sequence
of primitive operations (node inputs always reference earlier nodes, so the
record order is already topological), and ``Tape.backward`` replays it once
in reverse, accumulating adjoints. The primitive set is exactly what the
stochastic rollout and the kernel loss need: affine maps, GELU, dropout-mask
multiplies, elementwise add/sub/scale/abs/square, matrix-vector products,
row sums, squared-distance Gram matrices, kernel mixtures, and scalar
reductions.

Values are plain C-order float64 ``numpy`` arrays. Vector-valued primitives
accept either a single vector ``[n]`` or a batch of vectors ``[B, n]``
(matrix-valued ones ``[p, q]`` or ``[B, p, q]``); there is no general
broadcasting. Scalar reductions use ``math.fsum``, which makes them exactly
invariant under sample permutations and independent of memory order.

Gradients for a scalar output come back as a dict mapping leaf node id to an
array of the leaf's shape; every registered leaf is present, unreachable
ones with zeros. Backward never mutates the tape, so repeated calls are
bit-identical.
"""

import math

import numpy as np

from .backends import kernels as _K


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform; message names expected vs actual."""


def as_tensor(x, name="tensor"):
    """Validate and normalize input to a finite, C-order float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _check(cond, what, expected, actual):
    if not cond:
        raise ShapeMismatchError(f"{what}: expected {expected}, got {actual}")


class Node:
    """Handle to one tape record."""

    __slots__ = ("tape", "id")

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def value(self):
        return self.tape._nodes[self.id].value

    @property
    def shape(self):
        return self.tape._nodes[self.id].value.shape


class _Record:
    __slots__ = ("op", "inputs", "value", "payload", "requires_grad")

    def __init__(self, op, inputs, value, payload, requires_grad):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.payload = payload
        self.requires_grad = requires_grad


class Tape:
    """Single-owner recording of a differentiable computation."""

    def __init__(self):
        self._nodes = []
        self._leaf_ids = []

    def __len__(self):
        return len(self._nodes)

    # -- node creation ----------------------------------------------------

    def _append(self, op, inputs, value, payload=None):
        value = np.asarray(value, dtype=np.float64)
        value.flags.writeable = False
        req = any(self._nodes[i].requires_grad for i in inputs)
        self._nodes.append(_Record(op, inputs, value, payload, req))
        return Node(self, len(self._nodes) - 1)

    def leaf(self, x, name="leaf"):
        """Register a differentiable input (a parameter)."""
        value = as_tensor(x, name).copy()
        value.flags.writeable = False
        self._nodes.append(_Record("leaf", (), value, None, True))
        node = Node(self, len(self._nodes) - 1)
        self._leaf_ids.append(node.id)
        return node

    def const(self, x, name="const"):
        """Register a non-differentiable input."""
        value = as_tensor(x, name).copy()
        value.flags.writeable = False
        self._nodes.append(_Record("const", (), value, None, False))
        return Node(self, len(self._nodes) - 1)

    def _coerce(self, x, name="input"):
        return x if isinstance(x, Node) else self.const(x, name)

    # -- primitives --------------------------------------------------------

    def affine(self, w, b, x):
        """w @ x + b for a vector x, or x @ w.T + b row-wise for a batch."""
        w, b, x = self._coerce(w, "w"), self._coerce(b, "b"), self._coerce(x, "x")
        wv, bv, xv = w.value, b.value, x.value
        _check(wv.ndim == 2, "affine weight rank", 2, wv.ndim)
        m, n = wv.shape
        _check(bv.shape == (m,), "affine bias shape", (m,), bv.shape)
        _check(
            xv.shape[-1] == n and xv.ndim in (1, 2),
            "affine input shape",
            f"(..,{n})",
            xv.shape,
        )
        out = xv @ wv.T + bv
        return self._append("affine", (w.id, b.id, x.id), out)

    def gelu(self, x):
        """Elementwise x * Phi(x) with the exact erf-based normal CDF."""
        x = self._coerce(x)
        return self._append("gelu", (x.id,), _K.gelu(x.value))

    def dropout(self, x, mask):
        """Multiply by a fixed mask (constant w.r.t. differentiation)."""
        x = self._coerce(x)
        mask = np.ascontiguousarray(mask, dtype=np.float64)
        _check(mask.shape == x.value.shape, "dropout mask shape", x.value.shape, mask.shape)
        return self._append("dropout", (x.id,), x.value * mask, mask)

    def add(self, a, b):
        a, b = self._coerce(a), self._coerce(b)
        _check(a.value.shape == b.value.shape, "add shapes", a.value.shape, b.value.shape)
        return self._append("add", (a.id, b.id), a.value + b.value)

    def sub(self, a, b):
        a, b = self._coerce(a), self._coerce(b)
        _check(a.value.shape == b.value.shape, "sub shapes", a.value.shape, b.value.shape)
        return self._append("sub", (a.id, b.id), a.value - b.value)

    def scale(self, x, c):
        x = self._coerce(x)
        return self._append("scale", (x.id,), x.value * float(c), float(c))

    def matvec(self, a_mat, x):
        """Multiply by a constant matrix: a_mat @ x (row-wise for batches)."""
        x = self._coerce(x)
        a_mat = np.ascontiguousarray(a_mat, dtype=np.float64)
        _check(a_mat.ndim == 2, "matvec matrix rank", 2, a_mat.ndim)
        _check(
            x.value.shape[-1] == a_mat.shape[1] and x.value.ndim in (1, 2),
            "matvec input shape",
            f"(..,{a_mat.shape[1]})",
            x.value.shape,
        )
        return self._append("matvec", (x.id,), x.value @ a_mat.T, a_mat)

    def bmv(self, z, w):
        """z @ w with a constant vector w: [p,q]x[q] or batched [B,p,q]x[B,q]."""
        z = self._coerce(z)
        w = np.ascontiguousarray(w, dtype=np.float64)
        zv = z.value
        if zv.ndim == 2:
            _check(w.shape == (zv.shape[1],), "bmv vector shape", (zv.shape[1],), w.shape)
            out = zv @ w
        else:
            _check(zv.ndim == 3, "bmv operand rank", "2 or 3", zv.ndim)
            _check(
                w.shape == (zv.shape[0], zv.shape[2]),
                "bmv vector shape",
                (zv.shape[0], zv.shape[2]),
                w.shape,
            )
            out = np.einsum("bpq,bq->bp", zv, w)
        return self._append("bmv", (z.id,), out, w)

    def abs(self, x):
        """Elementwise |x|; the derivative uses sign(0) = 0."""
        x = self._coerce(x)
        return self._append("abs", (x.id,), np.abs(x.value))

    def square(self, x):
        x = self._coerce(x)
        return self._append("square", (x.id,), x.value * x.value)

    def sum_last(self, x):
        """Sum over the trailing axis."""
        x = self._coerce(x)
        return self._append("sum_last", (x.id,), x.value.sum(axis=-1))

    def reshape(self, x, shape):
        x = self._coerce(x)
        return self._append("reshape", (x.id,), x.value.reshape(shape), x.value.shape)

    def sum(self, x):
        x = self._coerce(x)
        return self._append("sum", (x.id,), math.fsum(x.value.ravel()))

    def mean(self, x):
        x = self._coerce(x)
        v = x.value
        return self._append("mean", (x.id,), math.fsum(v.ravel()) / v.size)

    def sqdist(self, a, b):
        """Gram matrix of squared distances between rows of a [m,d] and b [n,d]."""
        a, b = self._coerce(a), self._coerce(b)
        av, bv = a.value, b.value
        _check(av.ndim == 2 and bv.ndim == 2, "sqdist ranks", (2, 2), (av.ndim, bv.ndim))
        _check(av.shape[1] == bv.shape[1], "sqdist dims", av.shape[1], bv.shape[1])
        return self._append("sqdist", (a.id, b.id), _K.sqdist(av, bv))

    def kernel_mix(self, d2, sigmas):
        """Mean over bandwidths sigma of exp(-d2 / (2 sigma^2))."""
        d2 = self._coerce(d2)
        sig = np.ascontiguousarray(sigmas, dtype=np.float64)
        if sig.size == 0 or np.any(sig <= 0):
            raise ValueError("bandwidths must be non-empty and strictly positive")
        return self._append("kernel_mix", (d2.id,), _K.kernel_mix(d2.value, sig), sig)

    def offdiag_mean(self, k):
        """Mean of the off-diagonal entries of a square matrix."""
        k = self._coerce(k)
        kv = k.value
        _check(
            kv.ndim == 2 and kv.shape[0] == kv.shape[1] and kv.shape[0] >= 2,
            "offdiag_mean operand",
            "square matrix with m >= 2",
            kv.shape,
        )
        m = kv.shape[0]
        total = math.fsum(kv.ravel()) - math.fsum(np.diagonal(kv))
        return self._append("offdiag_mean", (k.id,), total / (m * (m - 1)))

    # -- reverse pass -------------------------------------------------------

    def backward(self, output):
        """Gradients of a scalar output node for every leaf, by reverse replay."""
        rec = self._nodes[output.id]
        if rec.value.shape != ():
            raise ValueError(f"backward output must be scalar, got shape {rec.value.shape}")
        return self.backward_from(output, np.float64(1.0))

    def backward_from(self, output, seed):
        """Like backward, but seeds an arbitrary node with an explicit adjoint."""
        seed = np.asarray(seed, dtype=np.float64)
        out_rec = self._nodes[output.id]
        _check(seed.shape == out_rec.value.shape, "seed shape", out_rec.value.shape, seed.shape)
        grads = {lid: np.zeros_like(self._nodes[lid].value) for lid in self._leaf_ids}
        adjoint = {output.id: seed.copy()}
        for nid in range(output.id, -1, -1):
            rec = self._nodes[nid]
            if nid not in adjoint or not rec.requires_grad:
                adjoint.pop(nid, None)
                continue
            g = adjoint.pop(nid)
            if rec.op == "leaf":
                grads[nid] += g
                continue
            self._pullback(rec, g, adjoint)
        return grads

    def _accum(self, adjoint, nid, g):
        if not self._nodes[nid].requires_grad:
            return
        if nid in adjoint:
            adjoint[nid] += g
        else:
            adjoint[nid] = np.array(g, dtype=np.float64)

    def _pullback(self, rec, g, adjoint):
        op = rec.op
        if op == "affine":
            w_id, b_id, x_id = rec.inputs
            wv = self._nodes[w_id].value
            xv = self._nodes[x_id].value
            if xv.ndim == 1:
                self._accum(adjoint, w_id, np.outer(g, xv))
                self._accum(adjoint, b_id, g)
            else:
                self._accum(adjoint, w_id, g.T @ xv)
                self._accum(adjoint, b_id, g.sum(axis=0))
            self._accum(adjoint, x_id, g @ wv)
        elif op == "gelu":
            (x_id,) = rec.inputs
            self._accum(adjoint, x_id, g * _K.gelu_grad(self._nodes[x_id].value))
        elif op == "dropout":
            self._accum(adjoint, rec.inputs[0], g * rec.payload)
        elif op == "add":
            self._accum(adjoint, rec.inputs[0], g)
            self._accum(adjoint, rec.inputs[1], g)
        elif op == "sub":
            self._accum(adjoint, rec.inputs[0], g)
            self._accum(adjoint, rec.inputs[1], -g)
        elif op == "scale":
            self._accum(adjoint, rec.inputs[0], g * rec.payload)
        elif op == "matvec":
            self._accum(adjoint, rec.inputs[0], g @ rec.payload)
        elif op == "bmv":
            w = rec.payload
            if w.ndim == 1:
                self._accum(adjoint, rec.inputs[0], np.outer(g, w))
            else:
                self._accum(adjoint, rec.inputs[0], g[:, :, None] * w[:, None, :])
        elif op == "abs":
            (x_id,) = rec.inputs
            self._accum(adjoint, x_id, g * np.sign(self._nodes[x_id].value))
        elif op == "square":
            (x_id,) = rec.inputs
            self._accum(adjoint, x_id, 2.0 * g * self._nodes[x_id].value)
        elif op == "sum_last":
            (x_id,) = rec.inputs
            shape = self._nodes[x_id].value.shape
            self._accum(adjoint, x_id, np.broadcast_to(g[..., None], shape))
        elif op == "reshape":
            self._accum(adjoint, rec.inputs[0], g.reshape(rec.payload))
        elif op == "sum":
            (x_id,) = rec.inputs
            self._accum(adjoint, x_id, np.full(self._nodes[x_id].value.shape, float(g)))
        elif op == "mean":
            (x_id,) = rec.inputs
            xv = self._nodes[x_id].value
            self._accum(adjoint, x_id, np.full(xv.shape, float(g) / xv.size))
        elif op == "sqdist":
            a_id, b_id = rec.inputs
            av = self._nodes[a_id].value
            bv = self._nodes[b_id].value
            self._accum(adjoint, a_id, 2.0 * (av * g.sum(axis=1)[:, None] - g @ bv))
            self._accum(adjoint, b_id, 2.0 * (bv * g.sum(axis=0)[:, None] - g.T @ av))
        elif op == "kernel_mix":
            (d_id,) = rec.inputs
            dv = self._nodes[d_id].value
            self._accum(adjoint, d_id, g * _K.kernel_mix_grad(dv, rec.payload))
        elif op == "offdiag_mean":
            (k_id,) = rec.inputs
            m = self._nodes[k_id].value.shape[0]
            gk = np.full((m, m), float(g) / (m * (m - 1)))
            np.fill_diagonal(gk, 0.0)
            self._accum(adjoint, k_id, gk)
        else:  # pragma: no cover - unreachable by construction
            raise RuntimeError(f"unknown op {op!r} on tape")


def finite_diff_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = as_tensor(x, "x")
    grad = np.zeros_like(x)
    flat = grad.ravel()
    for i in range(x.size):
        xp = x.copy().ravel()
        xm = x.copy().ravel()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad
