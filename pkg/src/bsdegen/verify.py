"""Built-in correctness oracles.

Each check pits an engine computation against an independent reference:
finite differences for reverse-mode gradients, closed forms for the OU law
and the linear backward dynamics, hand-computed kernel statistics for the
two-sample loss, and the written update rule for the optimizer. The CLI
``verify`` subcommand runs them all and reports one PASS/FAIL line each.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import Tape, finite_diff_gradient
from .backends import kernels as _K
from .bsde import GeneratorSpec, make_z_provider, new_model, rollout_y
from .mmd import KernelSpec, kernel_eval, mmd2_value
from .rng import Rng
from .sde import (
    ForwardSpec,
    TimeGrid,
    lyapunov_residual,
    ou_stationary_covariance,
    scalar_ou_strong_errors,
    simulate_ou_terminal,
)


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(float(np.max(np.abs(want))), 1e-8)
    return float(np.max(np.abs(got - want))) / scale


def _mlp_loss_and_grads(config, params, x):
    tape = Tape()
    layers, leaves = nn.bind_mlp(params, tape)
    out = nn.mlp_forward(config, layers, x, tape, "eval")
    loss = tape.sum(tape.square(out))
    grads = tape.backward(loss)
    return float(loss.value), [grads[leaf.id] for leaf in leaves]


def _mlp_fd_grads(config, params, x, h=1e-5):
    flats = []
    tensors = params.tensors()
    for k in range(len(tensors)):
        def f_of_param(p, k=k):
            probe = [t.copy() for t in tensors]
            probe[k] = p
            probed = nn.MLPParams.from_tensors(probe)
            tape = Tape()
            out = nn.mlp_apply(config, probed, x, tape, "eval")
            return float(tape.sum(tape.square(out)).value)

        flats.append(finite_diff_gradient(f_of_param, tensors[k], h))
    return flats


def mlp_gradient_check(n_models=20, seed=2024, tol=1e-4):
    """Reverse-mode gradients of random small MLPs vs central differences."""
    rng = Rng(seed)
    worst = 0.0
    for k in range(n_models):
        r = rng.spawn(k)
        widths = tuple(2 + int(u * 15) for u in r.uniforms(2))  # hidden widths <= 16
        d_in = 1 + int(r.uniforms(1)[0] * 5)
        d_out = 1 + int(r.uniforms(1)[0] * 5)
        config = nn.MLPConfig(d_in, d_out, widths, dropout_p=0.0)
        params = nn.init_mlp(config, r)
        x = r.normals(d_in)
        _, ad = _mlp_loss_and_grads(config, params, x)
        fd = _mlp_fd_grads(config, params, x)
        for a, f in zip(ad, fd):
            worst = max(worst, _rel_err(a, f))
    return OracleResult(
        "gradient-check-mlp",
        worst <= tol,
        f"max relative error {worst:.3e} over {n_models} networks (tol {tol:g})",
    )


def _rollout_loss(model, zeta, x_path, dw, params_y0, params_z):
    tape = Tape()
    y0 = nn.mlp_apply(model.y0_config, params_y0, zeta, tape, "eval")
    layers = [
        (tape.const(w, "zw"), tape.const(b, "zb"))
        for w, b in zip(params_z.weights, params_z.biases)
    ]
    provider = make_z_provider(model, tape, layers, "eval")
    y_t = rollout_y(y0, provider, x_path, dw, model.generator_spec, model.grid, tape)
    return float(tape.sum(tape.square(y_t)).value)


def rollout_gradient_check(seed=7, tol=1e-4):
    """Gradients through the full N-step rollout vs central differences."""
    model = new_model(
        d_x=2, d_y=2, d_w=2, grid=TimeGrid(1.0, 3), hidden=(4,), dropout_p=0.0, seed=seed
    )
    r = Rng(seed + 1)
    zeta = r.normals(2)
    dw = r.normal_matrix(3, 2) * np.sqrt(model.grid.dt)
    from .sde import euler_forward_x

    x_path = euler_forward_x(model.forward_spec, zeta, dw, model.grid)

    tape = Tape()
    y0_layers, y0_leaves = nn.bind_mlp(model.y0_params, tape)
    z_layers, z_leaves = nn.bind_mlp(model.z_params, tape)
    y0 = nn.mlp_forward(model.y0_config, y0_layers, zeta, tape, "eval")
    provider = make_z_provider(model, tape, z_layers, "eval")
    y_t = rollout_y(y0, provider, x_path, dw, model.generator_spec, model.grid, tape)
    grads = tape.backward(tape.sum(tape.square(y_t)))
    ad = [grads[leaf.id] for leaf in y0_leaves + z_leaves]

    tensors = model.y0_params.tensors() + model.z_params.tensors()
    n_y0 = len(model.y0_params.tensors())
    worst = 0.0
    for k in range(len(tensors)):
        def f_of_param(p, k=k):
            probe = [t.copy() for t in tensors]
            probe[k] = p
            py0 = nn.MLPParams.from_tensors(probe[:n_y0])
            pz = nn.MLPParams.from_tensors(probe[n_y0:])
            return _rollout_loss(model, zeta, x_path, dw, py0, pz)

        fd = finite_diff_gradient(f_of_param, tensors[k], 1e-5)
        worst = max(worst, _rel_err(ad[k], fd))
    return OracleResult(
        "gradient-check-rollout",
        worst <= tol,
        f"max relative error {worst:.3e} through {model.grid.steps} steps (tol {tol:g})",
    )


def gelu_fixture(tol=1e-6):
    """Point values and the analytic derivative of the erf-based GELU."""
    phi1 = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))  # Phi(1)
    pdf1 = math.exp(-0.5) / math.sqrt(2.0 * math.pi)  # phi(1)
    g = _K.gelu(np.array([0.0, 1.0, -10.0]))
    dg = _K.gelu_grad(np.array([0.0, 1.0]))
    checks = [
        abs(g[0]) == 0.0,
        abs(g[1] - phi1) <= 1e-12,
        abs(g[1] - 0.841345) <= tol,
        np.isfinite(g[2]) and -8e-23 < g[2] < -7e-23,
        abs(dg[0] - 0.5) <= 1e-12,
        abs(dg[1] - (phi1 + pdf1)) <= 1e-12,
    ]
    fd = finite_diff_gradient(lambda x: float(_K.gelu(x)[0]), np.array([1.0]), 1e-5)
    checks.append(abs(fd[0] - (phi1 + pdf1)) <= 1e-6)
    return OracleResult(
        "gelu-fixtures",
        all(checks),
        f"gelu(1)={g[1]:.9f}, gelu'(1)={dg[1]:.9f}, tail gelu(-10)={g[2]:.3e}",
    )


def rmsprop_fixture():
    """Two hand-computed update steps at lr=0.1, decay=0.9, eps=0."""
    p = [np.array([0.0])]
    g = [np.array([1.0])]
    state = nn.RMSPropState.zeros_like(p)
    p, state = nn.rmsprop_step(p, g, state, lr=0.1, decay=0.9, eps=0.0)
    first = -0.1 / math.sqrt(0.1)
    ok = abs(p[0][0] - first) <= 1e-12 and abs(state.v[0][0] - 0.1) <= 1e-12
    p, state = nn.rmsprop_step(p, g, state, lr=0.1, decay=0.9, eps=0.0)
    second = first - 0.1 / math.sqrt(0.19)
    ok = ok and abs(p[0][0] - second) <= 1e-12 and abs(state.v[0][0] - 0.19) <= 1e-12
    return OracleResult(
        "rmsprop-fixtures",
        ok,
        f"trajectory ({p[0][0]:.6f} after 2 steps; expected {second:.6f})",
    )


def lyapunov_fixture(tol=1e-10):
    """Stationary covariance solves its Lyapunov equation; analytic diagonal cases."""
    lam = np.eye(4)
    sigma = np.sqrt(2.0) * np.eye(4)
    c = ou_stationary_covariance(lam, sigma)
    resid = lyapunov_residual(lam, sigma, c)
    ok = resid <= tol and np.allclose(c, np.eye(4), atol=1e-12)
    lam2 = np.diag([0.5, 1.0, 2.0])
    sig2 = 0.7 * np.eye(3)
    c2 = ou_stationary_covariance(lam2, sig2)
    want = np.diag(0.49 / (2.0 * np.array([0.5, 1.0, 2.0])))
    ok = ok and np.allclose(c2, want, atol=1e-12)
    ok = ok and lyapunov_residual(lam2, sig2, c2) <= tol
    c3 = ou_stationary_covariance(np.eye(2), np.zeros((2, 2)))
    ok = ok and np.allclose(c3, 0.0, atol=1e-14)
    return OracleResult("lyapunov-stationary-covariance", ok, f"residual {resid:.2e} (tol {tol:g})")


def ou_stationarity_check(n_paths=100_000, d_x=32, steps=200, seed=11, rel_tol=0.05):
    """Empirical covariance of X_T from a stationary start vs the Lyapunov solution."""
    spec = ForwardSpec.standard_ou(d_x)
    grid = TimeGrid(1.0, steps)
    c = ou_stationary_covariance(spec.lam, spec.sigma)
    x_t = simulate_ou_terminal(spec, grid, n_paths, seed)
    mean = x_t.mean(axis=0)
    centered = x_t - mean
    emp = centered.T @ centered / (n_paths - 1)
    err = np.linalg.norm(emp - c) / np.linalg.norm(c)
    return OracleResult(
        "ou-stationarity",
        err <= rel_tol,
        f"Frobenius-relative covariance error {err:.4f} over {n_paths} paths (tol {rel_tol})",
    )


def euler_strong_order_check(n_paths=10_000, seed=13, lo=1.5, hi=2.5):
    """Strong error of the Euler scheme halves (ratio in [lo, hi]) per N doubling."""
    curve = scalar_ou_strong_errors(seed, n_paths)
    ratios = curve.ratios()
    ok = all(lo <= r <= hi for r in ratios)
    pretty = ", ".join(f"{r:.2f}" for r in ratios)
    return OracleResult(
        "euler-strong-order",
        ok,
        f"error ratios per doubling [{pretty}] within [{lo}, {hi}]",
    )


def _linear_rollout_error(n_steps, d_y=3, d_x=2, d_w=2, b_diag=-0.5, horizon=1.0):
    grid = TimeGrid(horizon, n_steps)
    spec = GeneratorSpec(a=np.zeros((d_y, d_x)), b=b_diag * np.eye(d_y), kappa=0.0)
    target = np.ones(d_y)
    y0 = np.exp(b_diag * horizon) * target
    x_path = np.zeros((n_steps + 1, d_x))
    dw = np.zeros((n_steps, d_w))
    tape = Tape()
    zeros_z = tape.const(np.zeros((d_y, d_w)), "zero control")
    y_t = rollout_y(y0, lambda t, x: zeros_z, x_path, dw, spec, grid, tape)
    return float(np.max(np.abs(y_t.value - target)))


def linear_bsde_check(levels=(50, 100, 200), lo=1.5, hi=2.5):
    """Deterministic linear backward dynamics recover exp(B(T-t)) c at T."""
    errors = [_linear_rollout_error(n) for n in levels]
    ok = all(e <= 5.0 / n for e, n in zip(errors, levels))
    ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]
    ok = ok and all(lo <= r <= hi for r in ratios)
    pretty = ", ".join(f"{e:.2e}" for e in errors)
    return OracleResult(
        "linear-bsde-closed-form",
        ok,
        f"sup errors [{pretty}] at N={list(levels)}, halving ratios "
        + ", ".join(f"{r:.2f}" for r in ratios),
    )


def telescoping_check(tol=1e-12, seed=5):
    """With zero drift and constant control, Y_T = y0 + Z0 W_T exactly."""
    d_y, d_x, d_w, n = 3, 2, 2, 200
    grid = TimeGrid(1.0, n)
    spec = GeneratorSpec(a=np.zeros((d_y, d_x)), b=np.zeros((d_y, d_y)), kappa=0.0)
    r = Rng(seed)
    z0 = r.normal_matrix(d_y, d_w)
    y0 = r.normals(d_y)
    dw = r.normal_matrix(n, d_w) * np.sqrt(grid.dt)
    x_path = np.zeros((n + 1, d_x))
    tape = Tape()
    z_node = tape.const(z0, "constant control")
    y_t = rollout_y(y0, lambda t, x: z_node, x_path, dw, spec, grid, tape)
    want = y0 + z0 @ dw.sum(axis=0)
    err = float(np.max(np.abs(y_t.value - want)))
    return OracleResult(
        "rollout-telescoping", err <= tol, f"max deviation {err:.2e} (tol {tol:g})"
    )


def mmd_fixture():
    """Hand-computed kernel and two-sample values."""
    rbf = KernelSpec("rbf", (1.0,))
    checks = []
    checks.append(abs(kernel_eval(rbf, [0.7, -1.2], [0.7, -1.2]) - 1.0) == 0.0)
    checks.append(abs(kernel_eval(rbf, [0.0], [2.0]) - math.exp(-2.0)) <= 1e-15)
    ms = KernelSpec("multiscale", (1.0, 2.0))
    want = 0.5 * (math.exp(-2.0) + math.exp(-0.5))
    checks.append(abs(kernel_eval(ms, [0.0], [2.0]) - want) <= 1e-15)

    zz = np.zeros((2, 1))
    checks.append(mmd2_value(zz, zz, rbf) == 0.0)
    twos = np.full((2, 1), 2.0)
    want2 = 2.0 - 2.0 * math.exp(-2.0)
    checks.append(abs(mmd2_value(zz, twos, rbf) - want2) <= 1e-12)

    r = Rng(17)
    x = r.normal_matrix(6, 3)
    y = r.normal_matrix(5, 3) + 0.3
    sym = abs(mmd2_value(x, y, ms) - mmd2_value(y, x, ms))
    checks.append(sym <= 1e-12)
    return OracleResult(
        "mmd-fixtures",
        all(checks),
        f"2x2 case {mmd2_value(zz, twos, rbf):.9f} (want {want2:.9f}), symmetry gap {sym:.1e}",
    )


def run_all(quick=False):
    """Every oracle; quick mode shrinks the Monte Carlo sizes."""
    return [
        mlp_gradient_check(n_models=5 if quick else 20),
        rollout_gradient_check(),
        gelu_fixture(),
        rmsprop_fixture(),
        lyapunov_fixture(),
        ou_stationarity_check(n_paths=20_000 if quick else 100_000),
        euler_strong_order_check(n_paths=2_000 if quick else 10_000),
        linear_bsde_check(),
        telescoping_check(),
        mmd_fixture(),
    ]
