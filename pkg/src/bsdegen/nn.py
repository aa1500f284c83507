"""MLPs with GELU activations and inverted dropout, plus RMSprop.

The two learned maps of the generative model are plain multilayer
perceptrons: hidden layers of affine + GELU (+ dropout in train mode)
followed by a final affine output layer. Initialization is Glorot-style
normal, N(0, 2/(fan_in+fan_out)) for weights and zero biases, drawn
deterministically from a seeded stream in layer order.

A network that is applied repeatedly on one tape (the control network runs
once per time step) is first bound to tape leaves with ``bind_mlp`` so that
all applications share the same parameter nodes and gradients accumulate.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, as_tensor
from .rng import RowStreams


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    output_dim: int
    hidden_widths: tuple = (256, 256, 256)
    dropout_p: float = 0.2

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if len(self.hidden_widths) == 0 or any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden_widths must be a non-empty list of positive ints")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    def layer_dims(self):
        """(fan_in, fan_out) per affine layer, input to output."""
        dims = (self.input_dim, *self.hidden_widths, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class MLPParams:
    weights: list  # per layer, shape (fan_out, fan_in)
    biases: list  # per layer, shape (fan_out,)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up layerwise")
        for h, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {h}: weight {w.shape} and bias {b.shape} do not conform")
            if h > 0 and w.shape[1] != self.weights[h - 1].shape[0]:
                raise ValueError(
                    f"layer {h}: input width {w.shape[1]} != previous output "
                    f"{self.weights[h - 1].shape[0]}"
                )

    def tensors(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    @classmethod
    def from_tensors(cls, flat):
        if len(flat) % 2 != 0:
            raise ValueError("expected alternating weight/bias tensors")
        return cls(weights=list(flat[0::2]), biases=list(flat[1::2]))


def init_mlp(config, rng):
    """Glorot-normal weights, zero biases; deterministic per stream."""
    weights, biases = [], []
    for fan_in, fan_out in config.layer_dims():
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal_matrix(fan_out, fan_in) * std)
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def bind_mlp(params, tape):
    """Register every parameter as a tape leaf once; returns (layer node pairs, flat leaves)."""
    layers, leaves = [], []
    for w, b in zip(params.weights, params.biases):
        wn = tape.leaf(w, "weight")
        bn = tape.leaf(b, "bias")
        layers.append((wn, bn))
        leaves.extend([wn, bn])
    return layers, leaves


def _mask_uniforms(rng, shape):
    if isinstance(rng, RowStreams):
        if len(shape) != 2 or len(rng) != shape[0]:
            raise ValueError(f"row streams ({len(rng)}) do not match batch shape {shape}")
        return rng.uniforms(shape[1])
    n = 1
    for s in shape:
        n *= s
    return rng.uniforms(n).reshape(shape)


def mlp_forward(config, layers, x, tape, mode="eval", rng=None):
    """Record one application of the network and return its output node.

    layers holds per-layer (weight, bias) pairs, either arrays (recorded as
    constants) or nodes previously bound with bind_mlp. x is an array or
    node of shape [input_dim] or [batch, input_dim]. In train mode each
    hidden activation is multiplied by a fresh inverted-dropout mask drawn
    from rng (keep probability 1-p, survivors scaled by 1/(1-p)); eval mode
    applies no masks and never touches rng.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and config.dropout_p > 0.0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    if not isinstance(x, Node):
        x = tape.const(as_tensor(x, "mlp input"), "mlp input")
    if x.value.shape[-1] != config.input_dim:
        raise ValueError(
            f"mlp input dim mismatch: expected {config.input_dim}, got {x.value.shape[-1]}"
        )
    n_layers = len(layers)
    h = x
    for i, (w, b) in enumerate(layers):
        h = tape.affine(w, b, h)
        if i < n_layers - 1:
            h = tape.gelu(h)
            if mode == "train" and config.dropout_p > 0.0:
                u = _mask_uniforms(rng, h.value.shape)
                keep = 1.0 - config.dropout_p
                mask = (u >= config.dropout_p).astype(np.float64) / keep
                h = tape.dropout(h, mask)
    return h


def mlp_apply(config, params, x, tape, mode="eval", rng=None):
    """One-shot application with parameters recorded as constants."""
    return mlp_forward(config, list(zip(params.weights, params.biases)), x, tape, mode, rng)


def mlp_eval(config, params, x):
    """Tape-free eval-mode forward pass; bit-identical to the recorded one."""
    from .backends import kernels as _K

    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != config.input_dim:
        raise ValueError(
            f"mlp input dim mismatch: expected {config.input_dim}, got {x.shape[-1]}"
        )
    n_layers = len(params.weights)
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < n_layers - 1:
            h = _K.gelu(h)
    return h


@dataclass
class RMSPropState:
    v: list = field(default_factory=list)  # running mean-square per parameter
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(v=[np.zeros_like(p) for p in params], step=0)


def rmsprop_step(params, grads, state, lr, decay=0.99, eps=1e-8):
    """One RMSprop update: v <- decay*v + (1-decay)*g^2, p <- p - lr*g/(sqrt(v)+eps).

    params and grads are aligned flat lists of arrays; returns new lists and
    state without mutating the inputs.
    """
    if len(grads) != len(params):
        raise ValueError(f"got {len(grads)} gradients for {len(params)} parameters")
    new_params, new_v = [], []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise ValueError(f"missing gradient for parameter {i}")
        if g.shape != p.shape:
            raise ValueError(f"parameter {i}: gradient shape {g.shape} != {p.shape}")
        v = decay * state.v[i] + (1.0 - decay) * (g * g)
        new_params.append(p - lr * g / (np.sqrt(v) + eps))
        new_v.append(v)
    return new_params, RMSPropState(v=new_v, step=state.step + 1)
