"""Forward-process machinery: Brownian and Ornstein-Uhlenbeck dynamics.

Paths are simulated with the explicit Euler scheme on a uniform grid,
    X_{n+1} = X_n + b(t_n, X_n) dt + sigma(t_n, X_n) dW_n,
with b = 0, sigma = I for the Brownian kind and b(x) = -lam x, constant
sigma for the OU kind. Exact OU facts (stationary covariance from the
Lyapunov equation, the exponential-kernel solution formula) live here too;
they serve as oracles for the simulator.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .backends import kernels as _K
from .rng import derive_many


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def dt(self):
        return self.horizon / self.steps

    def times(self):
        return np.linspace(0.0, self.horizon, self.steps + 1)


def _check_pos_def(lam):
    sym = 0.5 * (lam + lam.T)
    if np.min(np.linalg.eigvalsh(sym)) <= 0:
        raise ValueError("lam must be positive definite (symmetric part)")


@dataclass(frozen=True)
class ForwardSpec:
    """Coefficients of the forward process; kind is 'brownian' or 'ou'."""

    kind: str = "ou"
    lam: np.ndarray = None
    sigma: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("brownian", "ou"):
            raise ValueError(f"unknown forward kind {self.kind!r}")
        if self.kind == "ou":
            if self.lam is None or self.sigma is None:
                raise ValueError("ou forward needs lam and sigma matrices")
            lam = np.ascontiguousarray(self.lam, dtype=np.float64)
            sigma = np.ascontiguousarray(self.sigma, dtype=np.float64)
            if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
                raise ValueError(f"lam must be square, got {lam.shape}")
            if sigma.ndim != 2 or sigma.shape[0] != lam.shape[0]:
                raise ValueError(f"sigma rows must match lam, got {sigma.shape}")
            _check_pos_def(lam)
            object.__setattr__(self, "lam", lam)
            object.__setattr__(self, "sigma", sigma)

    @classmethod
    def standard_ou(cls, dim):
        """Unit mean reversion with sqrt(2) noise; its stationary law is N(0, I)."""
        return cls(kind="ou", lam=np.eye(dim), sigma=np.sqrt(2.0) * np.eye(dim))

    @classmethod
    def brownian(cls):
        return cls(kind="brownian")

    def noise_dim(self, d_x):
        return self.sigma.shape[1] if self.kind == "ou" else d_x


def sample_initial(d_x, rng):
    """Standard-normal start, N(0, I_{d_x})."""
    if d_x < 1:
        raise ValueError("d_x must be >= 1")
    return rng.normals(d_x)


def brownian_increments(grid, d_w, rng):
    """N x d_w i.i.d. increments with variance dt, drawn row-major."""
    return rng.normal_matrix(grid.steps, d_w) * np.sqrt(grid.dt)


def euler_forward_x(spec, zeta, dw, grid):
    """Full Euler path from zeta, [N+1, d_x]; batched when zeta is [B, d_x]."""
    zeta = np.asarray(zeta, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    single = zeta.ndim == 1
    z = zeta[None, :] if single else zeta
    w = dw[None, :, :] if single else dw
    n_batch, d_x = z.shape
    if w.shape[0] != n_batch or w.shape[1] != grid.steps:
        raise ValueError(
            f"increments shaped {dw.shape} do not match batch {n_batch} and steps {grid.steps}"
        )
    if spec.kind == "brownian":
        if w.shape[2] != d_x:
            raise ValueError(f"brownian forward needs d_w == d_x, got {w.shape[2]} != {d_x}")
    elif w.shape[2] != spec.sigma.shape[1]:
        raise ValueError(f"increments dim {w.shape[2]} != sigma columns {spec.sigma.shape[1]}")
    dt = grid.dt
    path = np.empty((n_batch, grid.steps + 1, d_x))
    path[:, 0] = z
    x = z
    for n in range(grid.steps):
        if spec.kind == "brownian":
            x = x + w[:, n]
        else:
            x = x - (x @ spec.lam.T) * dt + w[:, n] @ spec.sigma.T
        path[:, n + 1] = x
    return path[0] if single else path


def ou_stationary_covariance(lam, sigma):
    """Covariance C of the OU stationary law: solves lam C + C lam^T = sigma sigma^T."""
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    _check_pos_def(lam)
    c = solve_continuous_lyapunov(lam, sigma @ sigma.T)
    return 0.5 * (c + c.T)


def lyapunov_residual(lam, sigma, c):
    """Frobenius norm of lam C + C lam^T - sigma sigma^T."""
    return np.linalg.norm(lam @ c + c @ lam.T - sigma @ sigma.T)


def _diagonal_of(mat, name):
    d = np.diagonal(mat).copy()
    if np.count_nonzero(mat - np.diag(d)):
        raise ValueError(f"{name} must be diagonal for the fused path kernel")
    return d


def simulate_ou_terminal(spec, grid, n_paths, seed):
    """Terminal states X_T of n_paths OU paths started from the stationary law.

    Per-path substreams are derived from the seed, so the result does not
    depend on how paths are batched. Diagonal lam/sigma go through the fused
    backend kernel; the general case falls back to blockwise Euler.
    """
    if spec.kind != "ou":
        raise ValueError("stationary simulation requires the ou forward kind")
    c = ou_stationary_covariance(spec.lam, spec.sigma)
    seeds = derive_many(seed, count=n_paths)
    dt = grid.dt
    try:
        lam_d = _diagonal_of(spec.lam, "lam")
        sig_d = _diagonal_of(spec.sigma, "sigma")
    except ValueError:
        chol = np.linalg.cholesky(c)
        return _simulate_ou_terminal_generic(spec, grid, seeds, chol)
    init_scale = np.sqrt(np.diagonal(c).copy())
    step_mult = 1.0 - lam_d * dt
    step_noise = sig_d * np.sqrt(dt)
    return _K.ou_diag_terminal(seeds, step_mult, step_noise, init_scale, grid.steps)


def _simulate_ou_terminal_generic(spec, grid, seeds, chol, block=4096):
    from .rng import RowStreams

    d_x = spec.lam.shape[0]
    d_w = spec.sigma.shape[1]
    dt = grid.dt
    sq = np.sqrt(dt)
    out = np.empty((len(seeds), d_x))
    for lo in range(0, len(seeds), block):
        streams = RowStreams(seeds[lo : lo + block])
        x = streams.normals(d_x) @ chol.T
        for _ in range(grid.steps):
            z = streams.normals(d_w)
            x = x - (x @ spec.lam.T) * dt + (z * sq) @ spec.sigma.T
        out[lo : lo + block] = x
    return out


@dataclass
class StrongErrorCurve:
    levels: list
    rms_errors: list = field(default_factory=list)

    def ratios(self):
        e = self.rms_errors
        return [e[i] / e[i + 1] for i in range(len(e) - 1)]


def scalar_ou_strong_errors(
    seed, n_paths, levels=(25, 50, 100, 200), fine_mult=16, lam=1.0, sigma=None, horizon=1.0
):
    """RMS error at T of Euler vs the exact scalar OU solution on shared noise.

    One fine Brownian path per sample (fine_mult times the largest level)
    drives everything: coarse increments are partial sums of the fine ones,
    and the exact solution X_T = e^{-lam T} zeta + sigma * int e^{-lam(T-s)} dW
    is evaluated by left-endpoint quadrature on the fine grid, whose own
    error is an order of magnitude below the coarsest Euler error.
    """
    if sigma is None:
        sigma = np.sqrt(2.0)
    levels = sorted(levels)
    n_fine = levels[-1] * fine_mult
    for lv in levels:
        if n_fine % lv:
            raise ValueError(f"fine grid {n_fine} not divisible by level {lv}")
    dt_f = horizon / n_fine
    t_left = np.arange(n_fine) * dt_f
    ref_w = np.exp(-lam * (horizon - t_left))
    seeds = derive_many(seed, count=n_paths)
    sq_sums = {lv: 0.0 for lv in levels}
    from .rng import RowStreams

    block = 2048
    for lo in range(0, n_paths, block):
        streams = RowStreams(seeds[lo : lo + block])
        zeta = streams.normals(1)[:, 0]  # stationary start: unit variance
        dwf = streams.normals(n_fine) * np.sqrt(dt_f)
        x_ref = np.exp(-lam * horizon) * zeta + sigma * (dwf @ ref_w)
        for lv in levels:
            dt_l = horizon / lv
            dw_l = dwf.reshape(dwf.shape[0], lv, n_fine // lv).sum(axis=2)
            x = zeta.copy()
            for n in range(lv):
                x = x * (1.0 - lam * dt_l) + sigma * dw_l[:, n]
            sq_sums[lv] += float(np.sum((x - x_ref) ** 2))
    return StrongErrorCurve(
        levels=list(levels),
        rms_errors=[np.sqrt(sq_sums[lv] / n_paths) for lv in levels],
    )
