"""Backward process: generator drift, differentiable rollout, sampling.

The terminal value is produced by stepping

    Y_{n+1} = Y_n - f(t_n, X_n, Y_n, Z_n) dt + Z_n dW_n

forward in time on the same Brownian increments that drove the forward
path, with Y_0 and the per-step control matrices Z_n supplied by learned
networks. The drift is f(t,x,y,z) = A x + B y + kappa * |z| where |z| is
the row-wise L1 norm. Every step is recorded on a tape, so the terminal
value is differentiable with respect to Y_0 and every Z output; the x path
and the increments enter as constants.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import Node, Tape
from .rng import RowStreams, derive_many
from .sde import ForwardSpec, TimeGrid, euler_forward_x

GENERATE_CHUNK = 256


@dataclass(frozen=True)
class GeneratorSpec:
    """Drift coefficients: f(t,x,y,z) = a x + b y + kappa * rowL1(z)."""

    a: np.ndarray
    b: np.ndarray
    kappa: float

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.float64)
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        if a.ndim != 2 or b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"bad generator shapes a={a.shape} b={b.shape}")
        if b.shape[0] != a.shape[0]:
            raise ValueError(f"a rows {a.shape[0]} != b size {b.shape[0]}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "kappa", float(self.kappa))

    @classmethod
    def default(cls, d_x, d_y, b_diag=-0.5, kappa=0.1):
        """Zero x-coupling, mild contraction in y, small |z| term."""
        return cls(a=np.zeros((d_y, d_x)), b=b_diag * np.eye(d_y), kappa=kappa)


class RolloutDivergenceError(RuntimeError):
    def __init__(self, step, detail):
        super().__init__(f"rollout diverged at step {step}: {detail}")
        self.step = step


def generator_drift(spec, x, y, z, tape):
    """Record f(t,x,y,z) = a x + b y + kappa*rowL1(z); gradients flow to y and z."""
    y = tape._coerce(y, "y")
    z = tape._coerce(z, "z")
    d_y, d_x = spec.a.shape
    if y.value.shape[-1] != d_y:
        raise ValueError(f"y dim {y.value.shape[-1]} != generator size {d_y}")
    if z.value.shape[-2] != d_y:
        raise ValueError(f"z rows {z.value.shape[-2]} != generator size {d_y}")
    out = tape.matvec(spec.b, y)
    x_arr = x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)
    if x_arr.shape[-1] != d_x:
        raise ValueError(f"x dim {x_arr.shape[-1]} != generator input {d_x}")
    if np.any(spec.a):
        out = tape.add(out, tape.matvec(spec.a, x))
    if spec.kappa != 0.0:
        row_l1 = tape.sum_last(tape.abs(z))
        out = tape.add(out, tape.scale(row_l1, spec.kappa))
    return out


def rollout_y(y0, z_provider, x_path, dw, spec, grid, tape, divergence_limit=1e6):
    """Step the backward process to time T; returns the terminal node.

    y0 is a node or array [d_y] (or [B, d_y]); x_path [N+1, d_x] and dw
    [N, d_w] (or batched) must come from the same simulation. z_provider
    (t_n, x_n array) -> Z node of shape [.., d_y, d_w]. Any intermediate
    |Y| entry beyond divergence_limit aborts with the offending step.
    """
    x_path = np.asarray(x_path, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    y = tape._coerce(y0, "y0")
    batched = y.value.ndim == 2
    if x_path.ndim != (3 if batched else 2) or dw.ndim != (3 if batched else 2):
        raise ValueError(
            f"x_path {x_path.shape} / dw {dw.shape} do not match y0 {y.value.shape}"
        )
    if x_path.shape[-2] != grid.steps + 1 or dw.shape[-2] != grid.steps:
        raise ValueError(
            f"x_path {x_path.shape} and dw {dw.shape} do not cover {grid.steps} steps"
        )
    dt = grid.dt
    for n in range(grid.steps):
        t_n = n * dt
        x_n = x_path[:, n] if batched else x_path[n]
        dw_n = dw[:, n] if batched else dw[n]
        z = z_provider(t_n, x_n)
        drift = generator_drift(spec, x_n, y, z, tape)
        y = tape.add(tape.sub(y, tape.scale(drift, dt)), tape.bmv(z, dw_n))
        vals = y.value
        if not np.all(np.isfinite(vals)):
            raise RolloutDivergenceError(n, "non-finite entry in Y")
        peak = float(np.max(np.abs(vals)))
        if peak > divergence_limit:
            raise RolloutDivergenceError(n, f"|Y| reached {peak:.3e}")
    return y


@dataclass
class GenModel:
    """Everything needed to sample: the two networks plus process coefficients."""

    y0_config: nn.MLPConfig
    y0_params: nn.MLPParams
    z_config: nn.MLPConfig
    z_params: nn.MLPParams
    forward_spec: ForwardSpec
    generator_spec: GeneratorSpec
    grid: TimeGrid
    d_x: int
    d_y: int
    d_w: int

    def __post_init__(self):
        if self.y0_config.input_dim != self.d_x or self.y0_config.output_dim != self.d_y:
            raise ValueError("y0 network must map d_x -> d_y")
        if self.z_config.input_dim != 1 + self.d_x:
            raise ValueError("z network must take (t, x) of dimension 1 + d_x")
        if self.z_config.output_dim != self.d_y * self.d_w:
            raise ValueError("z network must emit d_y*d_w values")


def new_model(
    d_x,
    d_y,
    d_w=None,
    grid=None,
    hidden=(256, 256, 256),
    dropout_p=0.2,
    forward_spec=None,
    generator_spec=None,
    seed=0,
):
    """Freshly initialized model with the standard OU forward process."""
    from .rng import Rng

    d_w = d_x if d_w is None else d_w
    grid = grid or TimeGrid(1.0, 200)
    forward_spec = forward_spec or ForwardSpec.standard_ou(d_x)
    generator_spec = generator_spec or GeneratorSpec.default(d_x, d_y)
    y0_config = nn.MLPConfig(d_x, d_y, tuple(hidden), dropout_p)
    z_config = nn.MLPConfig(1 + d_x, d_y * d_w, tuple(hidden), dropout_p)
    init = Rng(seed)
    y0_params = nn.init_mlp(y0_config, init.spawn(1))
    z_params = nn.init_mlp(z_config, init.spawn(2))
    return GenModel(
        y0_config,
        y0_params,
        z_config,
        z_params,
        forward_spec,
        generator_spec,
        grid,
        d_x,
        d_y,
        d_w,
    )


def make_z_provider(model, tape, layers=None, mode="eval", rng=None):
    """Closure evaluating the control network at (t_n, X_n) and reshaping its output.

    Parameters bind to tape nodes once here; every per-step application
    reuses those nodes, so gradients accumulate and values are not recopied.
    """
    if layers is None:
        layers = [
            (tape.const(w, "z weight"), tape.const(b, "z bias"))
            for w, b in zip(model.z_params.weights, model.z_params.biases)
        ]

    def provider(t_n, x_n):
        x_n = np.asarray(x_n, dtype=np.float64)
        t_col = np.full(x_n.shape[:-1] + (1,), t_n)
        z_in = np.concatenate([t_col, x_n], axis=-1)
        flat = nn.mlp_forward(model.z_config, layers, z_in, tape, mode, rng)
        target = x_n.shape[:-1] + (model.d_y, model.d_w)
        return tape.reshape(flat, target)

    return provider


def rollout_terminal_eval(model, zeta, x_path, dw, divergence_limit=1e6):
    """Tape-free batched rollout for sampling; same arithmetic as rollout_y.

    Evaluation needs no gradients, and skipping the tape avoids holding all
    N steps of forward activations in memory at image-scale output widths.
    """
    spec = model.generator_spec
    dt = model.grid.dt
    y = nn.mlp_eval(model.y0_config, model.y0_params, zeta)
    for n in range(model.grid.steps):
        t_n = n * dt
        x_n = x_path[:, n]
        t_col = np.full((x_n.shape[0], 1), t_n)
        z = nn.mlp_eval(
            model.z_config, model.z_params, np.concatenate([t_col, x_n], axis=-1)
        ).reshape(x_n.shape[0], model.d_y, model.d_w)
        drift = y @ spec.b.T
        if np.any(spec.a):
            drift = drift + x_n @ spec.a.T
        if spec.kappa != 0.0:
            drift = drift + spec.kappa * np.abs(z).sum(axis=-1)
        y = (y - drift * dt) + np.einsum("bpq,bq->bp", z, dw[:, n])
        if not np.all(np.isfinite(y)):
            raise RolloutDivergenceError(n, "non-finite entry in Y")
        peak = float(np.max(np.abs(y)))
        if peak > divergence_limit:
            raise RolloutDivergenceError(n, f"|Y| reached {peak:.3e}")
    return y


def generate_batch(model, n, rng):
    """Sample n terminal values Y_T, [n, d_y]; bit-reproducible per rng state.

    Consumes one stream output from rng and derives a per-sample substream
    from it, so results do not depend on internal chunk sizes.
    """
    if n < 0:
        raise ValueError("sample count must be >= 0")
    out = np.empty((n, model.d_y))
    if n == 0:
        return out
    base = int(rng.outputs(1)[0])
    seeds = derive_many(base, count=n)
    sq_dt = np.sqrt(model.grid.dt)
    for lo in range(0, n, GENERATE_CHUNK):
        streams = RowStreams(seeds[lo : lo + GENERATE_CHUNK])
        zeta = streams.normals(model.d_x)
        dw = streams.normals(model.grid.steps * model.d_w).reshape(
            len(streams), model.grid.steps, model.d_w
        ) * sq_dt
        x_path = euler_forward_x(model.forward_spec, zeta, dw, model.grid)
        out[lo : lo + GENERATE_CHUNK] = rollout_terminal_eval(model, zeta, x_path, dw)
    return out


# -- checkpoint glue ---------------------------------------------------------


def _mlp_entries(prefix, params):
    entries = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        entries.append((f"{prefix}.w{i}", w))
        entries.append((f"{prefix}.b{i}", b))
    return entries


def model_param_entries(model):
    return _mlp_entries("y0", model.y0_params) + _mlp_entries("z", model.z_params)


def model_configs(model):
    return {
        "dims": {"d_x": model.d_x, "d_y": model.d_y, "d_w": model.d_w},
        "grid": {"horizon": model.grid.horizon, "steps": model.grid.steps},
        "forward": {
            "kind": model.forward_spec.kind,
            "lam": None if model.forward_spec.lam is None else model.forward_spec.lam.tolist(),
            "sigma": None
            if model.forward_spec.sigma is None
            else model.forward_spec.sigma.tolist(),
        },
        "generator": {
            "a": model.generator_spec.a.tolist(),
            "b": model.generator_spec.b.tolist(),
            "kappa": model.generator_spec.kappa,
        },
        "y0_net": {
            "hidden_widths": list(model.y0_config.hidden_widths),
            "dropout_p": model.y0_config.dropout_p,
        },
        "z_net": {
            "hidden_widths": list(model.z_config.hidden_widths),
            "dropout_p": model.z_config.dropout_p,
        },
    }


def _mlp_from_params(prefix, config, params):
    weights, biases = [], []
    for i in range(len(config.layer_dims())):
        try:
            weights.append(params[f"{prefix}.w{i}"])
            biases.append(params[f"{prefix}.b{i}"])
        except KeyError as exc:
            raise ValueError(f"checkpoint missing parameter {exc.args[0]!r}") from None
    return nn.MLPParams(weights, biases)


def model_from_checkpoint(configs, params):
    dims = configs["dims"]
    d_x, d_y, d_w = int(dims["d_x"]), int(dims["d_y"]), int(dims["d_w"])
    grid = TimeGrid(float(configs["grid"]["horizon"]), int(configs["grid"]["steps"]))
    fwd = configs["forward"]
    forward_spec = (
        ForwardSpec.brownian()
        if fwd["kind"] == "brownian"
        else ForwardSpec(kind="ou", lam=np.array(fwd["lam"]), sigma=np.array(fwd["sigma"]))
    )
    gen = configs["generator"]
    generator_spec = GeneratorSpec(a=np.array(gen["a"]), b=np.array(gen["b"]), kappa=gen["kappa"])
    y0_config = nn.MLPConfig(
        d_x, d_y, tuple(configs["y0_net"]["hidden_widths"]), configs["y0_net"]["dropout_p"]
    )
    z_config = nn.MLPConfig(
        1 + d_x,
        d_y * d_w,
        tuple(configs["z_net"]["hidden_widths"]),
        configs["z_net"]["dropout_p"],
    )
    return GenModel(
        y0_config,
        _mlp_from_params("y0", y0_config, params),
        z_config,
        _mlp_from_params("z", z_config, params),
        forward_spec,
        generator_spec,
        grid,
        d_x,
        d_y,
        d_w,
    )
