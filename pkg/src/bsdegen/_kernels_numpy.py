"""Pure-numpy implementations of the hot numeric kernels.

Every function here has a numba twin in ``_kernels_numba`` with identical
semantics; ``backends`` picks one set at import time. Keep the two files in
lockstep: same names, same signatures, same draw-consumption rules.

Random streams are counter based. Output ``i`` of the stream with a given
64-bit seed is ``mix64(seed + (i+1)*GAMMA)`` where ``mix64`` is the
splitmix64 finalizer. Uniforms take the top 53 bits, ``u = (o >> 11) * 2**-53``
in [0, 1). Normals are Box-Muller pairs over consecutive outputs:
``r = sqrt(-2*log1p(-u1))``, ``theta = 2*pi*u2``, yielding ``r*cos(theta)``
then ``r*sin(theta)``. A request for ``n`` normals always consumes
``2*ceil(n/2)`` outputs.
"""

import numpy as np
from scipy.special import erfc as _erfc

U64 = np.uint64
GAMMA = U64(0x9E3779B97F4A7C15)
MIX_M1 = U64(0xBF58476D1CE4E5B9)
MIX_M2 = U64(0x94D049BB133111EB)
TWO_NEG53 = 2.0**-53
TWO_PI = 2.0 * np.pi
INV_SQRT2 = 1.0 / np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _mix64(z):
    z = (z ^ (z >> U64(30))) * MIX_M1
    z = (z ^ (z >> U64(27))) * MIX_M2
    return z ^ (z >> U64(31))


def splitmix_outputs(seed, start, count):
    """Raw uint64 stream outputs [start, start+count) for one seed."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return _mix64(U64(seed) + idx * GAMMA)


def uniforms(seed, start, count):
    o = splitmix_outputs(seed, start, count)
    return (o >> U64(11)).astype(np.float64) * TWO_NEG53


def _boxmuller(u):
    # u has even length; pairs are (u[0],u[1]), (u[2],u[3]), ...
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    th = TWO_PI * u2
    out = np.empty_like(u)
    out[..., 0::2] = r * np.cos(th)
    out[..., 1::2] = r * np.sin(th)
    return out


def normals(seed, start, n):
    npairs = (n + 1) // 2
    u = uniforms(seed, start, 2 * npairs)
    return _boxmuller(u)[:n]


def uniforms_rows(seeds, start, n):
    """Row r holds the n uniforms of stream seeds[r] starting at cursor start."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    o = _mix64(seeds[:, None] + idx[None, :] * GAMMA)
    return (o >> U64(11)).astype(np.float64) * TWO_NEG53


def normals_rows(seeds, start, n):
    npairs = (n + 1) // 2
    u = uniforms_rows(seeds, start, 2 * npairs)
    return _boxmuller(u)[:, :n]


def gelu(x):
    # Phi(x) = erfc(-x/sqrt(2))/2; the erfc form keeps the negative tail
    # from rounding to zero (erf saturates at 1 already near |x| ~ 6).
    return x * (0.5 * _erfc(x * -INV_SQRT2))


def gelu_grad(x):
    phi = np.exp(-0.5 * x * x) * INV_SQRT_2PI
    return 0.5 * _erfc(x * -INV_SQRT2) + x * phi


def sqdist(a, b):
    """Pairwise squared euclidean distances, [m,d] x [n,d] -> [m,n]."""
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def kernel_mix(d2, sigmas):
    """Mean over bandwidths of exp(-d2 / (2*sigma**2))."""
    acc = np.zeros_like(d2)
    for s in sigmas:
        acc += np.exp(d2 * (-0.5 / (s * s)))
    return acc / len(sigmas)


def kernel_mix_grad(d2, sigmas):
    """Elementwise d/d(d2) of kernel_mix."""
    acc = np.zeros_like(d2)
    for s in sigmas:
        c = -0.5 / (s * s)
        acc += c * np.exp(d2 * c)
    return acc / len(sigmas)


def ou_diag_terminal(seeds, step_mult, step_noise, init_scale, n_steps):
    """Terminal states of Euler-discretized diagonal OU dynamics, one row per path.

    Path p draws, from stream seeds[p] starting at cursor 0, first d initial
    normals (scaled by init_scale) and then n_steps blocks of d increment
    normals; each block updates X <- step_mult*X + step_noise*z. The scale
    vectors fold in Delta-t, so callers pass step_mult = 1 - lam*dt and
    step_noise = sigma*sqrt(dt).
    """
    d = len(step_mult)
    per_call = 2 * ((d + 1) // 2)
    x = normals_rows(seeds, 0, d) * init_scale[None, :]
    cur = per_call
    for _ in range(n_steps):
        z = normals_rows(seeds, cur, d)
        x = x * step_mult[None, :] + z * step_noise[None, :]
        cur += per_call
    return x
